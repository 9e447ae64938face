#include "pszsim/atf_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace psz {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'Z', 'A', 'T', 'F', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "ATF container I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

void save_atf(const std::filesystem::path& path, const std::vector<ATFMatrix>& records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");

  os.write(kMagic, sizeof(kMagic));
  for (const ATFMatrix& atf : records) {
    write_pod(os, atf.freq);
    write_pod(os, static_cast<std::uint32_t>(atf.bright_rows));
    write_pod(os, static_cast<std::uint32_t>(atf.dark_rows()));
    write_pod(os, static_cast<std::uint32_t>(atf.speakers()));
    for (Eigen::Index m = 0; m < atf.entries.rows(); ++m) {
      for (Eigen::Index l = 0; l < atf.entries.cols(); ++l) {
        write_pod(os, atf.entries(m, l).real());
        write_pod(os, atf.entries(m, l).imag());
      }
    }
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<ATFMatrix> load_atf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path.string() + " is not a PSZATF01 container");

  std::vector<ATFMatrix> records;
  while (true) {
    double freq = 0.0;
    if (!read_pod(is, freq)) {
      if (is.eof()) break;
      throw IoError("truncated record header in " + path.string());
    }
    std::uint32_t m_b = 0, m_d = 0, l = 0;
    if (!read_pod(is, m_b) || !read_pod(is, m_d) || !read_pod(is, l))
      throw IoError("truncated record header in " + path.string());
    if (l == 0 || m_b + m_d == 0)
      throw IoError("empty ATF record in " + path.string());

    ATFMatrix atf;
    atf.freq = freq;
    atf.bright_rows = m_b;
    atf.entries.resize(static_cast<Eigen::Index>(m_b) + m_d, l);
    for (Eigen::Index m = 0; m < atf.entries.rows(); ++m) {
      for (Eigen::Index c = 0; c < atf.entries.cols(); ++c) {
        double re = 0.0, im = 0.0;
        if (!read_pod(is, re) || !read_pod(is, im))
          throw IoError("truncated entry data in " + path.string());
        atf.entries(m, c) = Complex(re, im);
      }
    }
    if (!atf.entries.allFinite())
      throw IoError("non-finite ATF entries in " + path.string());
    records.push_back(std::move(atf));
  }
  if (records.empty()) throw IoError("no records in " + path.string());
  return records;
}

ATFMatrix select_atf(const std::vector<ATFMatrix>& records, double freq_hz,
                     Eigen::Index bright, Eigen::Index dark, Eigen::Index speakers,
                     double tolerance_hz) {
  if (records.empty()) throw IoError("select_atf: no records");
  const ATFMatrix* best = nullptr;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const ATFMatrix& r : records) {
    const double gap = std::abs(r.freq - freq_hz);
    if (gap < best_gap) {
      best_gap = gap;
      best = &r;
    }
  }
  if (best_gap > tolerance_hz)
    throw IoError("select_atf: nearest record is " + std::to_string(best->freq) +
                  " Hz, wanted " + std::to_string(freq_hz) + " Hz");
  if (best->bright_rows != bright || best->dark_rows() != dark ||
      best->speakers() != speakers) {
    throw DimensionError("select_atf: record is " + std::to_string(best->bright_rows) +
                         "+" + std::to_string(best->dark_rows()) + " x " +
                         std::to_string(best->speakers()) + ", scene needs " +
                         std::to_string(bright) + "+" + std::to_string(dark) + " x " +
                         std::to_string(speakers));
  }
  return *best;
}

}  // namespace psz
