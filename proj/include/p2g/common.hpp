#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace p2g {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// Error categories map onto CLI exit codes: Usage=2, Io/Data=1, Nan=3.
enum class ErrorKind { Usage, Io, Data, Nan, Internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& m) { return Error(ErrorKind::Usage, m); }
inline Error io_error(const std::string& m) { return Error(ErrorKind::Io, m); }
inline Error data_error(const std::string& m) { return Error(ErrorKind::Data, m); }
inline Error nan_error(const std::string& m) { return Error(ErrorKind::Nan, m); }

// Runs fn(i) for i in [0, n). Results must not depend on scheduling: callers
// keep per-index state and reduce in index order afterwards.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace p2g
