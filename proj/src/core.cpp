#include "tdom/core.hpp"

#include <algorithm>

namespace tdom {

ActionGrid fine_grid() {
  ActionGrid g;
  g.x = {-7.5, 7.5, 4};
  g.z = {-3.0, 3.0, 7};
  g.theta = {0.0, 3.0, 4};
  g.tag = Granularity::Fine;
  return g;
}

ActionGrid coarse_grid() {
  // 2.5x the fine spans with identical counts. The x endpoints follow the
  // stated 18.7 mm rather than the exact 2.5 * 7.5.
  ActionGrid g;
  g.x = {-18.7, 18.7, 4};
  g.z = {-7.5, 7.5, 7};
  g.theta = {0.0, 7.5, 4};
  g.tag = Granularity::Coarse;
  return g;
}

ActionGrid single_loop_grid() {
  ActionGrid g;
  g.x = {-18.7, 18.7, 8};
  g.z = {-7.5, 7.5, 16};
  g.theta = {0.0, 7.5, 8};
  g.tag = Granularity::Coarse;
  return g;
}

const ActionGrid& grid_for(Granularity g) {
  static const ActionGrid fine = fine_grid();
  static const ActionGrid coarse = coarse_grid();
  return g == Granularity::Fine ? fine : coarse;
}

static void check_index(int idx, const GridAxis& ax, const char* name) {
  if (idx < 0 || idx >= ax.count) {
    throw ContractError(std::string("grid index out of range for axis ") +
                        name + ": " + std::to_string(idx) + " not in [0, " +
                        std::to_string(ax.count) + ")");
  }
}

PhysicalAction decode_action(const ActionGrid& grid, const InnerAction& a) {
  check_index(a.ix, grid.x, "x");
  check_index(a.iz, grid.z, "z");
  check_index(a.itheta, grid.theta, "theta");
  return {grid.x.value(a.ix), grid.z.value(a.iz), grid.theta.value(a.itheta),
          a.omega};
}

InnerAction encode_action(const ActionGrid& grid, const PhysicalAction& p) {
  auto nearest = [](const GridAxis& ax, double v) {
    int idx = static_cast<int>(std::lround((v - ax.min) / ax.spacing()));
    return std::clamp(idx, 0, ax.count - 1);
  };
  return {nearest(grid.x, p.x_mm), nearest(grid.z, p.z_mm),
          nearest(grid.theta, p.theta_deg), p.omega};
}

int snap_continuous(double u, int count) {
  u = std::clamp(u, -1.0, 1.0);
  int idx = static_cast<int>(std::lround((u + 1.0) / 2.0 * (count - 1)));
  return std::clamp(idx, 0, count - 1);
}

std::array<float, kAuxDim> encode_aux(Stage stage,
                                      std::optional<OuterAction> selection) {
  if (stage == Stage::Outer) {
    if (selection.has_value()) {
      throw ContractError("outer-stage aux takes no selection");
    }
    return {0.0f, 0.0f};
  }
  if (!selection.has_value()) {
    throw ContractError("inner-stage aux requires the outer selection");
  }
  float code = selection->selection == Granularity::Fine ? 1.0f : -1.0f;
  return {code, 1.0f};
}

}  // namespace tdom
