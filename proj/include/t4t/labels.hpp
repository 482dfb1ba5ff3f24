#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "t4t/error.hpp"

namespace t4t {

// General scene head (13 classes). Id 0 doubles as background.
namespace general {
inline constexpr std::int32_t kClutter = 0;
inline constexpr std::int32_t kCeiling = 1;
inline constexpr std::int32_t kFloor = 2;
inline constexpr std::int32_t kWall = 3;
inline constexpr std::int32_t kBeam = 4;
inline constexpr std::int32_t kColumn = 5;
inline constexpr std::int32_t kWindow = 6;
inline constexpr std::int32_t kDoor = 7;
inline constexpr std::int32_t kTable = 8;
inline constexpr std::int32_t kChair = 9;
inline constexpr std::int32_t kSofa = 10;
inline constexpr std::int32_t kBookcase = 11;
inline constexpr std::int32_t kBoard = 12;
inline constexpr std::array<std::string_view, 13> kNames{
    "clutter", "ceiling", "floor", "wall",  "beam",     "column", "window",
    "door",    "table",   "chair", "sofa",  "bookcase", "board"};
}  // namespace general

// Transparency head (12 classes).
namespace trans {
inline constexpr std::int32_t kBackground = 0;
inline constexpr std::int32_t kShelf = 1;
inline constexpr std::int32_t kJarTank = 2;
inline constexpr std::int32_t kFreezer = 3;
inline constexpr std::int32_t kWindow = 4;
inline constexpr std::int32_t kGlassDoor = 5;
inline constexpr std::int32_t kEyeglass = 6;
inline constexpr std::int32_t kCup = 7;
inline constexpr std::int32_t kGlassWall = 8;
inline constexpr std::int32_t kBowl = 9;
inline constexpr std::int32_t kBottle = 10;
inline constexpr std::int32_t kBox = 11;
inline constexpr std::array<std::string_view, 12> kNames{
    "background", "shelf", "jar/tank",   "freezer", "window", "glass door",
    "eyeglass",   "cup",   "glass wall", "bowl",    "bottle", "box"};
}  // namespace trans

inline std::string class_name(bool transparency_head, std::int32_t id) {
  if (transparency_head) {
    if (id < 0 || id >= static_cast<std::int32_t>(trans::kNames.size()))
      throw ValidationError("unknown transparency class id " + std::to_string(id));
    return std::string(trans::kNames[static_cast<std::size_t>(id)]);
  }
  if (id < 0 || id >= static_cast<std::int32_t>(general::kNames.size()))
    throw ValidationError("unknown general class id " + std::to_string(id));
  return std::string(general::kNames[static_cast<std::size_t>(id)]);
}

}  // namespace t4t
