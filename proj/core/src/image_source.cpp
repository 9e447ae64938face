#include <cmath>
#include <numbers>
#include <string>

#include "pszsim/scene.hpp"

namespace psz {

namespace {

constexpr double kFourPi = 4.0 * std::numbers::pi;

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

void check_params(const ImageSourceParams& p) {
  if (p.sample_rate <= 0.0) throw ConfigError("image source: sample rate must be positive");
  if (p.window_len < 1) throw ConfigError("image source: window length must be at least 1");
  if (p.t60 <= 0.0) throw ConfigError("image source: T60 must be positive");
}

}  // namespace

double sabine_absorption(const Vec3& room, double t60) {
  if (t60 <= 0.0) throw ConfigError("T60 must be positive");
  const double volume = room.x() * room.y() * room.z();
  const double surface = 2.0 * (room.x() * room.y() + room.x() * room.z() +
                                room.y() * room.z());
  const double alpha = 0.161 * volume / (surface * t60);
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw ConfigError("T60 = " + std::to_string(t60) +
                      " s gives Sabine absorption " + std::to_string(alpha) +
                      ", outside (0, 1]");
  }
  return alpha;
}

std::vector<double> image_source_rir(const Vec3& room, const Vec3& speaker,
                                     const Vec3& mic, double sound_speed,
                                     const ImageSourceParams& params) {
  check_params(params);
  if ((mic - speaker).norm() <= 0.0)
    throw GeometryError("microphone coincides with speaker: singular geometry");

  const double alpha = sabine_absorption(room, params.t60);
  const double beta = std::sqrt(1.0 - alpha);
  const double sample_len = sound_speed / params.sample_rate;  // meters per sample
  const int n_samples = params.window_len;

  // Work in sample units, as in the classic image-method generators.
  const Vec3 s = speaker / sample_len;
  const Vec3 r = mic / sample_len;
  const Vec3 box = room / sample_len;

  auto image_range = [&](double extent) {
    int n = static_cast<int>(std::ceil(n_samples / (2.0 * extent)));
    if (params.max_order >= 0) n = std::min(n, params.max_order / 2 + 1);
    return n;
  };
  const int n1 = image_range(box.x());
  const int n2 = image_range(box.y());
  const int n3 = image_range(box.z());

  std::vector<double> rir(static_cast<std::size_t>(n_samples), 0.0);

  for (int mx = -n1; mx <= n1; ++mx) {
    const double rm_x = 2.0 * mx * box.x();
    for (int my = -n2; my <= n2; ++my) {
      const double rm_y = 2.0 * my * box.y();
      for (int mz = -n3; mz <= n3; ++mz) {
        const double rm_z = 2.0 * mz * box.z();
        for (int q = 0; q <= 1; ++q) {
          const double dx = (1 - 2 * q) * s.x() - r.x() + rm_x;
          for (int j = 0; j <= 1; ++j) {
            const double dy = (1 - 2 * j) * s.y() - r.y() + rm_y;
            for (int k = 0; k <= 1; ++k) {
              const double dz = (1 - 2 * k) * s.z() - r.z() + rm_z;

              const int order = std::abs(2 * mx - q) + std::abs(2 * my - j) +
                                std::abs(2 * mz - k);
              if (params.max_order >= 0 && order > params.max_order) continue;

              const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
              const auto delay = static_cast<long>(std::llround(dist));
              if (delay >= n_samples) continue;

              const int reflections = std::abs(mx - q) + std::abs(mx) +
                                      std::abs(my - j) + std::abs(my) +
                                      std::abs(mz - k) + std::abs(mz);
              const double gain =
                  std::pow(beta, static_cast<double>(reflections)) /
                  (kFourPi * dist * sample_len);
              rir[static_cast<std::size_t>(delay)] += gain;
            }
          }
        }
      }
    }
  }
  return rir;
}

ATFMatrix image_source_atf_at(std::span<const Vec3> mics, Eigen::Index bright_rows,
                              std::span<const Vec3> speakers, const Vec3& room,
                              double sound_speed, double freq_hz,
                              const ImageSourceParams& params) {
  check_params(params);
  if (params.sample_rate < 2.0 * freq_hz) {
    throw ConfigError("frequency " + std::to_string(freq_hz) +
                      " Hz is above Nyquist for fs = " + std::to_string(params.sample_rate));
  }

  const int n_fft = next_pow2(params.window_len);
  const auto bin = static_cast<long>(std::llround(freq_hz * n_fft / params.sample_rate));
  const double bin_step = -2.0 * std::numbers::pi * static_cast<double>(bin) / n_fft;

  ATFMatrix atf;
  atf.freq = freq_hz;
  atf.bright_rows = bright_rows;
  atf.entries.resize(static_cast<Eigen::Index>(mics.size()),
                     static_cast<Eigen::Index>(speakers.size()));

  for (Eigen::Index m = 0; m < atf.entries.rows(); ++m) {
    for (Eigen::Index l = 0; l < atf.entries.cols(); ++l) {
      const std::vector<double> rir =
          image_source_rir(room, speakers[l], mics[m], sound_speed, params);
      Complex acc{0.0, 0.0};
      for (std::size_t n = 0; n < rir.size(); ++n) {
        if (rir[n] != 0.0)
          acc += rir[n] * std::polar(1.0, bin_step * static_cast<double>(n));
      }
      atf.entries(m, l) = acc;
    }
  }
  return atf;
}

}  // namespace psz
