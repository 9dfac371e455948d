// Prints the L1 and L2 regimes of binary branching Brownian motion along a
// lambda grid together with the speed function.

#include <cstdio>

#include "spinelab/spinelab.hpp"

int main() {
  using namespace spinelab;
  BbmParams params;
  std::printf("%8s %10s %10s %-22s %-22s\n", "lambda", "E", "c", "L1", "L2");
  for (int i = 1; i <= 20; ++i) {
    const double lambda = -0.1 * i;
    const BbmSpectral s = bbm_spectral(params, lambda);
    std::printf("%8.2f %10.5f %10.5f %-22s %-22s\n", lambda, s.e_lambda, *s.c_lambda,
                std::string(to_string(classify_bbm(params, lambda).tag)).c_str(),
                std::string(to_string(classify_bbm(params, lambda, 2.0).tag)).c_str());
  }
  std::printf("lambda_tilde = %.6f\n", bbm_spectral(params, 0.0).lambda_tilde);
}
