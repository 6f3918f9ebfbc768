// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. MNIST is read from $DMVAE_DATA_DIR (or argv[1]); scratch files go
// under a temporary directory.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dmvae/checks.hpp"

using namespace dmvae;

int main(int argc, char** argv) {
  std::string data_dir = argc > 1 ? argv[1] : "";
  if (data_dir.empty())
    if (const char* v = std::getenv("DMVAE_DATA_DIR")) data_dir = v;
  const auto scratch = std::filesystem::temp_directory_path() / "dmvae_acceptance";
  std::filesystem::remove_all(scratch);
  std::filesystem::create_directories(scratch);

  const std::vector<std::pair<const char*, std::function<checks::CheckResult()>>> criteria{
      {"1 distributions", checks::distribution_suite},
      {"2 gradients", checks::gradient_suite},
      {"3 estimator", checks::estimator_suite},
      {"4 synthetic", [] { return checks::synthetic_suite(); }},
      {"5 mnist",
       [&] {
         if (data_dir.empty() || !std::filesystem::is_directory(data_dir))
           return checks::CheckResult{"mnist", false, "no MNIST directory (set DMVAE_DATA_DIR)", 0.0};
         return checks::mnist_suite(data_dir, scratch / "mnist");
       }},
      {"6 determinism", [&] { return checks::determinism_suite(scratch / "determinism"); }},
      {"7 structure", checks::structure_suite},
  };

  int failed = 0;
  for (const auto& [label, run] : criteria) {
    checks::CheckResult r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s criterion %s (%.1fs): %s\n", r.passed ? "PASS" : "FAIL", label, r.seconds, r.detail.c_str());
    std::fflush(stdout);
    failed += r.passed ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
