#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "tdom/error.hpp"

namespace tdom {

// Observation layout (fixed sensor dimensionalities).
inline constexpr int kVisSize = 40;             // 40x40 depth crop
inline constexpr int kTouchSize = 25;           // 25x25 taxel grid
inline constexpr int kTouchChannels = 3;        // alpha/beta/gamma deformation
inline constexpr int kProDim = 6;               // 3 forces + 3 torques
inline constexpr int kAuxDim = 2;               // selection code + stage flag

enum class Granularity : uint8_t { Coarse, Fine };
enum class Stage : uint8_t { Outer, Inner };

// Multisensory observation. vis in meters, ind/thu in mm per taxel,
// pro in N / N*m, aux is (selection code, stage flag).
struct Observation {
  std::array<float, kVisSize * kVisSize> vis{};
  std::array<float, kTouchSize * kTouchSize * kTouchChannels> ind{};
  std::array<float, kTouchSize * kTouchSize * kTouchChannels> thu{};
  std::array<float, kProDim> pro{};
  std::array<float, kAuxDim> aux{};
  bool degenerate = false;  // slip missed the object, zero-contact reading
};

struct GridAxis {
  double min = 0.0;
  double max = 0.0;
  int count = 0;
  double value(int index) const {
    return min + index * (max - min) / (count - 1);
  }
  double spacing() const { return (max - min) / (count - 1); }
};

// Discretized displacement grid for the inner loop. x/z in mm, theta in deg.
struct ActionGrid {
  GridAxis x, z, theta;
  Granularity tag = Granularity::Fine;
};

struct InnerAction {
  int ix = 0, iz = 0, itheta = 0;
  bool omega = true;  // forced true at execution (one-step episodes)
};

struct OuterAction {
  Granularity selection = Granularity::Fine;
};

// Physical displacement command: x along alpha, z along gamma, rotation
// about beta. Always lies on a grid point of the active ActionGrid.
struct PhysicalAction {
  double x_mm = 0.0;
  double z_mm = 0.0;
  double theta_deg = 0.0;
  bool omega = true;
};

ActionGrid fine_grid();
ActionGrid coarse_grid();
ActionGrid single_loop_grid();  // full-range grid for the SL ablation
const ActionGrid& grid_for(Granularity g);

PhysicalAction decode_action(const ActionGrid& grid, const InnerAction& a);
InnerAction encode_action(const ActionGrid& grid, const PhysicalAction& p);

// Maps a squashed network output in [-1,1] to a grid index.
int snap_continuous(double u, int count);

// Auxiliary 2-vector: outer stage is all-zero placeholder; inner stage
// carries (selection code, 1) with coarse=-1, fine=+1.
std::array<float, kAuxDim> encode_aux(Stage stage,
                                      std::optional<OuterAction> selection);

}  // namespace tdom
