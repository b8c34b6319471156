#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "vinedmp/errors.hpp"
#include "vinedmp/image.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

enum class Split { train, dev, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw FormatError("unknown split '" + s + "'");
}

/// One demonstration: scene image plus the trajectory drawn on it.
struct Sample {
  std::string id;
  RgbImage image;
  Trajectory trajectory;
  Split split = Split::train;
  /// Seed of the generating scene, for originals that came from the simulator.
  std::optional<std::uint64_t> scene_seed;
  /// Id of the original this sample was augmented from; empty for originals.
  std::string parent;
};

}  // namespace vinedmp
