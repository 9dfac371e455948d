#ifndef SPINELAB_SPINELAB_HPP
#define SPINELAB_SPINELAB_HPP

#include "spinelab/bbm.hpp"
#include "spinelab/config.hpp"
#include "spinelab/engine.hpp"
#include "spinelab/errors.hpp"
#include "spinelab/mc.hpp"
#include "spinelab/models.hpp"
#include "spinelab/multitype.hpp"
#include "spinelab/offspring.hpp"
#include "spinelab/outype.hpp"
#include "spinelab/random.hpp"
#include "spinelab/trees.hpp"
#include "spinelab/verdict.hpp"

#endif  // SPINELAB_SPINELAB_HPP
