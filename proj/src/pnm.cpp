#include "sgone/pnm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "sgone/errors.hpp"

namespace sgone {

namespace {

struct Parser {
  std::filesystem::path path;
  std::vector<char> bytes;
  std::size_t pos = 0;

  explicit Parser(const std::filesystem::path& p) : path(p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot open " + p.string());
    bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(path.string() + ": " + what + " at byte offset " + std::to_string(pos));
  }

  bool eof() const { return pos >= bytes.size(); }
  std::uint8_t peek() const { return static_cast<std::uint8_t>(bytes[pos]); }

  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
  }

  // Header whitespace; '#' starts a comment running to end of line.
  void skip_header_space() {
    while (!eof()) {
      if (is_space(peek())) {
        ++pos;
      } else if (peek() == '#') {
        while (!eof() && peek() != '\n') ++pos;
      } else {
        return;
      }
    }
  }

  int read_header_int(const char* what) {
    skip_header_space();
    if (eof() || peek() < '0' || peek() > '9') fail(std::string("expected ") + what);
    long v = 0;
    while (!eof() && peek() >= '0' && peek() <= '9') {
      v = v * 10 + (peek() - '0');
      if (v > 1'000'000'000L) fail(std::string("unreasonable ") + what);
      ++pos;
    }
    return static_cast<int>(v);
  }

  std::string read_magic() {
    if (bytes.size() < 2 || bytes[0] != 'P') {
      pos = 0;
      fail("missing netpbm magic");
    }
    pos = 2;
    return {bytes[0], bytes[1]};
  }

  std::vector<std::uint8_t> read_samples(std::size_t count, bool binary, int maxval) {
    std::vector<std::uint8_t> out(count);
    if (binary) {
      if (eof() || !is_space(peek())) fail("expected single whitespace before binary payload");
      ++pos;
      if (bytes.size() - pos < count) {
        pos = bytes.size();
        fail("truncated payload, expected " + std::to_string(count) + " samples");
      }
      for (std::size_t i = 0; i < count; ++i) {
        out[i] = static_cast<std::uint8_t>(bytes[pos + i]);
      }
      pos += count;
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        const int v = read_header_int("ascii sample");
        if (v > maxval) fail("sample value " + std::to_string(v) + " exceeds maxval");
        out[i] = static_cast<std::uint8_t>(v);
      }
    }
    return out;
  }
};

int read_maxval(Parser& p) {
  const int maxval = p.read_header_int("maxval");
  if (maxval < 1 || maxval > 255) p.fail("unsupported maxval " + std::to_string(maxval));
  return maxval;
}

void validate_dims(Parser& p, int w, int h) {
  if (w < 1 || h < 1) p.fail("invalid dimensions");
  if (static_cast<long long>(w) * h > 64LL * 1024 * 1024) p.fail("image too large");
}

}  // namespace

RgbImage load_ppm(const std::filesystem::path& path) {
  Parser p(path);
  const std::string magic = p.read_magic();
  if (magic != "P6" && magic != "P3") {
    p.pos = 0;
    p.fail("not a PPM (P6/P3) file, magic '" + magic + "'");
  }
  RgbImage img;
  img.w = p.read_header_int("width");
  img.h = p.read_header_int("height");
  validate_dims(p, img.w, img.h);
  const int maxval = read_maxval(p);
  img.data = p.read_samples(static_cast<std::size_t>(img.w) * img.h * 3, magic == "P6", maxval);
  if (maxval != 255) {
    for (auto& v : img.data) {
      v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

GrayImage load_pgm(const std::filesystem::path& path) {
  Parser p(path);
  const std::string magic = p.read_magic();
  if (magic != "P5" && magic != "P2") {
    p.pos = 0;
    p.fail("not a PGM (P5/P2) file, magic '" + magic + "'");
  }
  GrayImage img;
  img.w = p.read_header_int("width");
  img.h = p.read_header_int("height");
  validate_dims(p, img.w, img.h);
  const int maxval = read_maxval(p);
  img.data = p.read_samples(static_cast<std::size_t>(img.w) * img.h, magic == "P5", maxval);
  if (maxval != 255) {
    for (auto& v : img.data) {
      v = static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& header,
                const std::vector<std::uint8_t>& samples, bool ascii) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << header;
  if (ascii) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      f << static_cast<int>(samples[i]) << ((i + 1) % 12 == 0 ? '\n' : ' ');
    }
    f << '\n';
  } else {
    f.write(reinterpret_cast<const char*>(samples.data()),
            static_cast<std::streamsize>(samples.size()));
  }
  if (!f) throw IoError("short write to " + path.string());
}

}  // namespace

void save_ppm(const std::filesystem::path& path, const RgbImage& img, bool ascii) {
  const std::string header = std::string(ascii ? "P3" : "P6") + "\n" + std::to_string(img.w) +
                             " " + std::to_string(img.h) + "\n255\n";
  write_file(path, header, img.data, ascii);
}

void save_pgm(const std::filesystem::path& path, const GrayImage& img, bool ascii) {
  const std::string header = std::string(ascii ? "P2" : "P5") + "\n" + std::to_string(img.w) +
                             " " + std::to_string(img.h) + "\n255\n";
  write_file(path, header, img.data, ascii);
}

DTensor image_to_tensor(const RgbImage& img) {
  const std::size_t plane = static_cast<std::size_t>(img.w) * img.h;
  std::vector<double> v(plane * 3);
  for (std::size_t i = 0; i < plane; ++i) {
    v[i] = img.data[3 * i] / 255.0;
    v[plane + i] = img.data[3 * i + 1] / 255.0;
    v[2 * plane + i] = img.data[3 * i + 2] / 255.0;
  }
  return DTensor::from_data({3, img.h, img.w}, std::move(v));
}

RgbImage tensor_to_image(const DTensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) {
    throw ShapeError("tensor_to_image expects [3, h, w], got " + shape_str(t.shape()));
  }
  const int h = t.dim(1), w = t.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  RgbImage img;
  img.w = w;
  img.h = h;
  img.data.resize(plane * 3);
  const double* d = t.data().data();
  auto to_byte = [](double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
  };
  for (std::size_t i = 0; i < plane; ++i) {
    img.data[3 * i] = to_byte(d[i]);
    img.data[3 * i + 1] = to_byte(d[plane + i]);
    img.data[3 * i + 2] = to_byte(d[2 * plane + i]);
  }
  return img;
}

DTensor load_image(const std::filesystem::path& path) { return image_to_tensor(load_ppm(path)); }

Mask load_mask(const std::filesystem::path& path) {
  const GrayImage g = load_pgm(path);
  Mask m(g.h, g.w);
  for (std::size_t i = 0; i < g.data.size(); ++i) m.data[i] = g.data[i] > 127 ? 1 : 0;
  return m;
}

void save_mask(const std::filesystem::path& path, const Mask& m) {
  GrayImage g;
  g.w = m.w;
  g.h = m.h;
  g.data.resize(m.data.size());
  for (std::size_t i = 0; i < m.data.size(); ++i) g.data[i] = m.data[i] ? 255 : 0;
  save_pgm(path, g);
}

namespace {

inline int reflect_index(int i, int size) {
  if (i < size) return i;
  const int r = 2 * size - 1 - i;  // mirror across the last sample
  return r < 0 ? 0 : r;
}

}  // namespace

DTensor pad_reflect_to_multiple(const DTensor& image, int multiple) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  DTensor out = DTensor::zeros({c, ph, pw});
  const double* in = image.data().data();
  double* o = out.mutable_data().data();
  for (int ic = 0; ic < c; ++ic) {
    for (int y = 0; y < ph; ++y) {
      const double* src = in + (static_cast<std::int64_t>(ic) * h + reflect_index(y, h)) * w;
      double* dst = o + (static_cast<std::int64_t>(ic) * ph + y) * pw;
      for (int x = 0; x < pw; ++x) dst[x] = src[reflect_index(x, w)];
    }
  }
  return out;
}

Mask pad_zero_to_multiple(const Mask& m, int multiple) {
  const int ph = (m.h + multiple - 1) / multiple * multiple;
  const int pw = (m.w + multiple - 1) / multiple * multiple;
  if (ph == m.h && pw == m.w) return m;
  Mask out(ph, pw);
  for (int y = 0; y < m.h; ++y) {
    for (int x = 0; x < m.w; ++x) out.at(y, x) = m.at(y, x);
  }
  return out;
}

}  // namespace sgone
