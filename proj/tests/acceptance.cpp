#include <algorithm>
#include <cstdlib>
#include <iostream>

#include "pnnunet/selftest/acceptance.hpp"

int main(int argc, char** argv) {
  pnn::selftest::AcceptanceOptions options;
  for (int i = 1; i < argc; ++i) options.only.insert(std::atoi(argv[i]));
  options.log = &std::cerr;
  const auto results = pnn::selftest::run_acceptance(options, std::cout);
  const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.pass; });
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return passed == static_cast<long>(results.size()) ? 0 : 1;
}
