#include "tdom/image.hpp"

#include <cmath>
#include <fstream>

#include "tdom/error.hpp"

namespace tdom::img {

Xform Xform::translation(double tx, double ty) {
  Xform t;
  t.m[2] = tx;
  t.m[5] = ty;
  return t;
}

Xform Xform::scaling(double sx, double sy) {
  Xform t;
  t.m[0] = sx;
  t.m[4] = sy;
  return t;
}

Xform Xform::rotation_deg(double deg, double cx, double cy) {
  double r = deg * M_PI / 180.0, c = std::cos(r), s = std::sin(r);
  Xform t;
  t.m[0] = c;
  t.m[1] = -s;
  t.m[2] = cx - c * cx + s * cy;
  t.m[3] = s;
  t.m[4] = c;
  t.m[5] = cy - s * cx - c * cy;
  return t;
}

Xform Xform::after(const Xform& o) const {
  Xform r;
  r.m[0] = m[0] * o.m[0] + m[1] * o.m[3];
  r.m[1] = m[0] * o.m[1] + m[1] * o.m[4];
  r.m[2] = m[0] * o.m[2] + m[1] * o.m[5] + m[2];
  r.m[3] = m[3] * o.m[0] + m[4] * o.m[3];
  r.m[4] = m[3] * o.m[1] + m[4] * o.m[4];
  r.m[5] = m[3] * o.m[2] + m[4] * o.m[5] + m[5];
  return r;
}

Xform Xform::inverse() const {
  double det = m[0] * m[4] - m[1] * m[3];
  if (std::abs(det) < 1e-12)
    throw ContractError("singular affine transform has no inverse");
  Xform r;
  r.m[0] = m[4] / det;
  r.m[1] = -m[1] / det;
  r.m[3] = -m[3] / det;
  r.m[4] = m[0] / det;
  r.m[2] = -(r.m[0] * m[2] + r.m[1] * m[5]);
  r.m[5] = -(r.m[3] * m[2] + r.m[4] * m[5]);
  return r;
}

void Xform::apply(double x, double y, double& ox, double& oy) const {
  ox = m[0] * x + m[1] * y + m[2];
  oy = m[3] * x + m[4] * y + m[5];
}

Image warp_nn(const Image& src, const Xform& dst_from_src, int out_h,
              int out_w) {
  Xform inv = dst_from_src.inverse();
  Image out(out_h, out_w, 0.0f);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      int ix = int(std::lround(sx)), iy = int(std::lround(sy));
      if (src.inside(iy, ix)) out.at(y, x) = src.at(iy, ix);
    }
  }
  return out;
}

Image resize_nn(const Image& src, int out_h, int out_w) {
  double sx = out_w > 1 ? double(src.w - 1) / (out_w - 1) : 0.0;
  double sy = out_h > 1 ? double(src.h - 1) / (out_h - 1) : 0.0;
  Image out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      int ix = int(std::lround(x * sx)), iy = int(std::lround(y * sy));
      out.at(y, x) = src.at(std::min(iy, src.h - 1), std::min(ix, src.w - 1));
    }
  return out;
}

Xform rotate_pad_xform(int h, int w, double deg, int out_h, int out_w) {
  int side = int(std::ceil(std::hypot(double(h), double(w)))) + 1;
  Xform pad = Xform::translation((side - w) / 2.0, (side - h) / 2.0);
  Xform rot = Xform::rotation_deg(deg, (side - 1) / 2.0, (side - 1) / 2.0);
  double sx = out_w > 1 ? double(out_w - 1) / (side - 1) : 1.0;
  double sy = out_h > 1 ? double(out_h - 1) / (side - 1) : 1.0;
  return Xform::scaling(sx, sy).after(rot.after(pad));
}

void write_pgm(const std::string& path, const Image& im) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open for writing: " + path);
  out << "P5\n" << im.w << " " << im.h << "\n255\n";
  std::vector<unsigned char> row(im.w);
  for (int y = 0; y < im.h; ++y) {
    for (int x = 0; x < im.w; ++x) {
      float v = std::min(1.0f, std::max(0.0f, im.at(y, x)));
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) throw RuntimeFailure("short write: " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open for reading: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw RuntimeFailure("not a P5 graymap: " + path);
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines between header tokens
    int c;
    while ((c = in.peek()) != EOF) {
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    long v;
    if (!(in >> v)) throw RuntimeFailure("bad graymap header: " + path);
    return v;
  };
  long w = next_int(), h = next_int(), maxv = next_int();
  if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 255)
    throw RuntimeFailure("bad graymap dimensions: " + path);
  in.get();  // single whitespace after maxval
  Image im{int(h), int(w)};
  std::vector<unsigned char> buf(size_t(w) * h);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (size_t(in.gcount()) != buf.size())
    throw RuntimeFailure("truncated graymap: " + path);
  for (size_t i = 0; i < buf.size(); ++i)
    im.pix[i] = float(buf[i]) / float(maxv);
  return im;
}

}  // namespace tdom::img
