#pragma once

#include <vector>

#include "emfi/types.hpp"

namespace emfi {

/// Lattice points origin + (i*pitch, j*pitch) covering the rectangle with
/// both borders included, in serpentine order: even rows run +x, odd rows -x.
std::vector<StagePosition> generate_grid(const GridSpec& spec);

/// Number of lattice lines along an extent, borders included.
std::size_t lattice_count(double extent, double pitch);

}  // namespace emfi
