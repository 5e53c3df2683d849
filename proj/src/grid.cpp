#include "emfi/grid.hpp"

#include <cmath>

namespace emfi {

std::size_t lattice_count(double extent, double pitch) {
  // The epsilon absorbs representation error such as 1.0 / 0.1 = 9.999...
  const double steps = std::floor(extent / pitch + 1e-9);
  return static_cast<std::size_t>(steps) + 1;
}

std::vector<StagePosition> generate_grid(const GridSpec& spec) {
  validate(spec);
  const std::size_t nx = lattice_count(spec.width, spec.pitch);
  const std::size_t ny = lattice_count(spec.height, spec.pitch);

  std::vector<StagePosition> out;
  out.reserve(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t k = 0; k < nx; ++k) {
      const std::size_t i = (j % 2 == 0) ? k : nx - 1 - k;
      out.push_back({spec.origin.x + static_cast<double>(i) * spec.pitch,
                     spec.origin.y + static_cast<double>(j) * spec.pitch, spec.z});
    }
  }
  return out;
}

}  // namespace emfi
