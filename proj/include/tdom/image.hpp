#pragma once

#include <string>
#include <vector>

namespace tdom::img {

// Row-major grayscale image with values in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> pix;

  Image() = default;
  Image(int h_, int w_, float fill = 0.0f)
      : h(h_), w(w_), pix(size_t(h_) * w_, fill) {}
  float& at(int y, int x) { return pix[size_t(y) * w + x]; }
  float at(int y, int x) const { return pix[size_t(y) * w + x]; }
  bool inside(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }
};

// 2x3 affine map: x' = m[0] x + m[1] y + m[2]; y' = m[3] x + m[4] y + m[5].
// Pixel centers sit at integer coordinates.
struct Xform {
  double m[6] = {1, 0, 0, 0, 1, 0};

  static Xform identity() { return {}; }
  static Xform translation(double tx, double ty);
  static Xform scaling(double sx, double sy);
  static Xform rotation_deg(double deg, double cx, double cy);
  // this applied after other: result(p) = this(other(p))
  Xform after(const Xform& other) const;
  Xform inverse() const;
  void apply(double x, double y, double& ox, double& oy) const;
};

// Nearest-neighbor warp. `dst_from_src` maps source pixels into the
// destination frame; samples falling outside the source are zero.
Image warp_nn(const Image& src, const Xform& dst_from_src, int out_h,
              int out_w);

Image resize_nn(const Image& src, int out_h, int out_w);

// Maps source pixels into a padded square (side = ceil of the diagonal),
// rotates about its center, then resizes to out_h x out_w.
Xform rotate_pad_xform(int h, int w, double deg, int out_h, int out_w);

// Binary 8-bit PGM (P5) with maxval 255; values quantized from [0, 1].
void write_pgm(const std::string& path, const Image& im);
Image read_pgm(const std::string& path);

}  // namespace tdom::img
