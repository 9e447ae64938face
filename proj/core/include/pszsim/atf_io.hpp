#pragma once

#include <filesystem>
#include <vector>

#include "pszsim/types.hpp"

namespace psz {

// Binary ATF container (see docs/atf_format.md): magic "PSZATF01", then a
// sequence of records, each
//   double  freq_hz        (little-endian IEEE-754)
//   uint32  M_b, M_d, L    (little-endian)
//   double  re, im pairs   (row-major, M*L entries)

/// Appends nothing; writes the whole record list to `path`.
void save_atf(const std::filesystem::path& path, const std::vector<ATFMatrix>& records);

/// Reads every record; throws IoError on malformed input.
std::vector<ATFMatrix> load_atf(const std::filesystem::path& path);

/// Record with frequency nearest `freq_hz`; validates M_b/M_d/L against the
/// expected dimensions and that the match is within `tolerance_hz`.
ATFMatrix select_atf(const std::vector<ATFMatrix>& records, double freq_hz,
                     Eigen::Index bright, Eigen::Index dark, Eigen::Index speakers,
                     double tolerance_hz = 0.5);

}  // namespace psz
