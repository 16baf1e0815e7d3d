#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "swarmstage/vec2.hpp"

namespace swarmstage {

inline constexpr int kDefaultGrayWidth = 10;

/// Reflected binary code of cell; throws Errc::InvalidInput when cell is
/// outside [0, 2^width_bits).
std::uint32_t gray_encode(std::uint32_t cell, int width_bits);
std::uint32_t gray_decode(std::uint32_t code) noexcept;

/// MSB-first bit sequence of a code, as projected frame by frame.
std::vector<std::uint8_t> gray_bits(std::uint32_t code, int width_bits);
std::uint32_t bits_to_code(std::span<const std::uint8_t> bits);

enum class Axis : std::uint8_t { X, Y };

struct GrayFrame {
  Axis axis = Axis::X;
  int bit_index = 0;  // 0 = most significant
  std::uint8_t photodiode_sample = 0;
};

struct Venue {
  double width = 6.0;   // x extent, m
  double depth = 12.0;  // y extent, m
};

struct ProjectionResult {
  std::vector<GrayFrame> frames;  // all X frames, then all Y frames
  bool out_of_coverage = false;
};

double cell_pitch(double extent, int width_bits) noexcept;

/// Photodiode samples seen by a tag under the projected patterns.
ProjectionResult simulate_projection(Vec2 tag, const Venue& venue, int width_bits = kDefaultGrayWidth);

/// Cell centre recovered from a frame sequence. Throws Errc::InvalidInput on
/// missing or inconsistent frames.
Vec2 decode_projection(std::span<const GrayFrame> frames, const Venue& venue, int width_bits = kDefaultGrayWidth);

}  // namespace swarmstage
