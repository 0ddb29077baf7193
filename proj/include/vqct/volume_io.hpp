#pragma once

#include <filesystem>

#include "vqct/grid.hpp"

namespace vqct {

/// Volume file format: `<name>.vqh` JSON header
///   {"dims":[nx,ny,nz], "spacing_mm":[3], "origin_mm":[3],
///    "dtype":"f32"|"u8", "data_file":"<name>.vqr"}
/// plus a raw little-endian payload in x-fastest order. `data_file` is
/// resolved relative to the header's directory.

Volume load_volume(const std::filesystem::path& header);
Mask load_mask(const std::filesystem::path& header);

void write_volume(const std::filesystem::path& header, const Volume& vol);
void write_mask(const std::filesystem::path& header, const Mask& mask);

/// Reads only the geometry and dtype from a header.
Geometry read_header_geometry(const std::filesystem::path& header, std::string* dtype = nullptr);

}  // namespace vqct
