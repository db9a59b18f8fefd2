#include "rtaformer/errors.hpp"

#include <sstream>
#include <vector>

namespace rtaformer {

std::string shape_string(const std::vector<int64_t>& sizes) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) os << ", ";
    os << sizes[i];
  }
  os << ')';
  return os.str();
}

}  // namespace rtaformer
