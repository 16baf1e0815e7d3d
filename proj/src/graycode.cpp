#include "swarmstage/graycode.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "swarmstage/error.hpp"

namespace swarmstage {

namespace {

void check_width(int width_bits) {
  if (width_bits < 1 || width_bits > 31) throw Error(Errc::InvalidInput, "gray code width must be in [1, 31]");
}

}  // namespace

std::uint32_t gray_encode(std::uint32_t cell, int width_bits) {
  check_width(width_bits);
  if (cell >= (1u << width_bits)) {
    throw Error(Errc::InvalidInput, "cell " + std::to_string(cell) + " out of range for " +
                                        std::to_string(width_bits) + " bits");
  }
  return cell ^ (cell >> 1);
}

std::uint32_t gray_decode(std::uint32_t code) noexcept {
  std::uint32_t n = code;
  for (std::uint32_t shift = 1; shift < 32; shift <<= 1) n ^= n >> shift;
  return n;
}

std::vector<std::uint8_t> gray_bits(std::uint32_t code, int width_bits) {
  check_width(width_bits);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(width_bits));
  for (int i = 0; i < width_bits; ++i) bits[i] = (code >> (width_bits - 1 - i)) & 1u;
  return bits;
}

std::uint32_t bits_to_code(std::span<const std::uint8_t> bits) {
  std::uint32_t code = 0;
  for (auto b : bits) code = (code << 1) | (b & 1u);
  return code;
}

double cell_pitch(double extent, int width_bits) noexcept {
  return extent / static_cast<double>(1u << width_bits);
}

ProjectionResult simulate_projection(Vec2 tag, const Venue& venue, int width_bits) {
  check_width(width_bits);
  ProjectionResult out;
  if (!is_finite(tag) || tag.x < 0.0 || tag.y < 0.0 || tag.x > venue.width || tag.y > venue.depth) {
    out.out_of_coverage = true;
    return out;
  }
  const std::uint32_t cells = 1u << width_bits;
  auto cell_of = [&](double v, double extent) {
    const auto c = static_cast<std::uint32_t>(std::floor(v / cell_pitch(extent, width_bits)));
    return std::min(c, cells - 1);
  };
  for (auto [axis, value, extent] : {std::tuple{Axis::X, tag.x, venue.width}, std::tuple{Axis::Y, tag.y, venue.depth}}) {
    const auto bits = gray_bits(gray_encode(cell_of(value, extent), width_bits), width_bits);
    for (int i = 0; i < width_bits; ++i) out.frames.push_back({axis, i, bits[i]});
  }
  return out;
}

Vec2 decode_projection(std::span<const GrayFrame> frames, const Venue& venue, int width_bits) {
  check_width(width_bits);
  std::vector<std::uint8_t> bx(width_bits), by(width_bits);
  std::vector<bool> seen_x(width_bits, false), seen_y(width_bits, false);
  for (const auto& f : frames) {
    if (f.bit_index < 0 || f.bit_index >= width_bits) throw Error(Errc::InvalidInput, "gray frame bit index out of range");
    auto& bits = f.axis == Axis::X ? bx : by;
    auto& seen = f.axis == Axis::X ? seen_x : seen_y;
    bits[f.bit_index] = f.photodiode_sample & 1u;
    seen[f.bit_index] = true;
  }
  const bool complete = std::all_of(seen_x.begin(), seen_x.end(), [](bool b) { return b; }) &&
                        std::all_of(seen_y.begin(), seen_y.end(), [](bool b) { return b; });
  if (!complete) throw Error(Errc::InvalidInput, "gray frame sequence is incomplete");
  const double px = cell_pitch(venue.width, width_bits);
  const double py = cell_pitch(venue.depth, width_bits);
  const std::uint32_t cx = gray_decode(bits_to_code(bx));
  const std::uint32_t cy = gray_decode(bits_to_code(by));
  return {(cx + 0.5) * px, (cy + 0.5) * py};
}

}  // namespace swarmstage
