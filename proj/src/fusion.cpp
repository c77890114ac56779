#include "tdom/fusion.hpp"

namespace tdom::fusion {

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Ours: return "Ours";
    case Mode::OV: return "OV";
    case Mode::NT: return "NT";
    case Mode::NF: return "NF";
    case Mode::SL: return "SL";
    case Mode::NA: return "NA";
  }
  return "Ours";
}

Mode mode_from_name(const std::string& s) {
  for (Mode m : {Mode::Ours, Mode::OV, Mode::NT, Mode::NF, Mode::SL,
                 Mode::NA}) {
    if (mode_name(m) == s) return m;
  }
  throw ConfigError("unknown ablation mode: " + s);
}

}  // namespace tdom::fusion
