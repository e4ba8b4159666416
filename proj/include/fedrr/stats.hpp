#pragma once

#include <cstddef>
#include <vector>

namespace fedrr {

// Standard normal quantile function (inverse CDF), accurate to full double
// precision over (0,1). Throws NumericalError outside (0,1).
double normal_quantile(double p);

// Standard normal CDF.
double normal_cdf(double x);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;      // sample standard deviation (n-1)
  double std_error = 0.0;   // stddev / sqrt(n)
  std::size_t count = 0;
};

MeanStd mean_std(const std::vector<double>& xs);

}  // namespace fedrr
