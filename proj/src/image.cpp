#include "nvs/image.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace nvs {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

// ---- CRC32 / Adler32 (PNG checksums) ----

std::uint32_t crc32_update(std::uint32_t crc, const std::uint8_t* p, std::size_t n) {
  static std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

std::uint32_t adler32(const std::uint8_t* p, std::size_t n) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a = (a + p[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void put_u32_be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

// ---- inflate (RFC 1951: stored, fixed and dynamic Huffman blocks) ----

struct BitReader {
  const std::uint8_t* p;
  std::size_t n, pos = 0;
  std::uint32_t bitbuf = 0;
  int bitcnt = 0;
  const std::string& file;

  BitReader(const std::uint8_t* data, std::size_t len, const std::string& f)
      : p(data), n(len), file(f) {}

  std::uint32_t bits(int count) {
    while (bitcnt < count) {
      if (pos >= n) throw IoError("truncated image file " + file);
      bitbuf |= static_cast<std::uint32_t>(p[pos++]) << bitcnt;
      bitcnt += 8;
    }
    std::uint32_t out = bitbuf & ((1u << count) - 1);
    bitbuf >>= count;
    bitcnt -= count;
    return out;
  }

  void align_byte() {
    bitbuf = 0;
    bitcnt = 0;
  }
};

// Canonical Huffman decoder driven by code lengths.
struct Huffman {
  // first_code[len], first_symbol[len], and symbols ordered by (len, symbol)
  std::array<std::uint32_t, 16> first_code{}, first_index{}, count{};
  std::vector<std::uint16_t> symbols;

  void build(const std::uint8_t* lengths, std::size_t n, const std::string& file) {
    count.fill(0);
    for (std::size_t i = 0; i < n; ++i) count[lengths[i]]++;
    count[0] = 0;
    std::uint32_t code = 0, index = 0;
    for (int len = 1; len <= 15; ++len) {
      code = (code + count[len - 1]) << 1;
      first_code[len] = code;
      first_index[len] = index;
      index += count[len];
    }
    symbols.assign(index, 0);
    std::array<std::uint32_t, 16> next{};
    for (int len = 1; len <= 15; ++len) next[len] = first_index[len];
    for (std::size_t i = 0; i < n; ++i)
      if (lengths[i] != 0) symbols[next[lengths[i]]++] = static_cast<std::uint16_t>(i);
    if (index == 0) throw IoError("corrupt deflate stream in " + file);
  }

  std::uint16_t decode(BitReader& br) const {
    std::uint32_t code = 0;
    for (int len = 1; len <= 15; ++len) {
      code |= br.bits(1);
      if (count[len] != 0 && code - first_code[len] < count[len])
        return symbols[first_index[len] + (code - first_code[len])];
      code <<= 1;
    }
    throw IoError("corrupt huffman code in " + br.file);
  }
};

std::vector<std::uint8_t> inflate(const std::uint8_t* data, std::size_t n,
                                  const std::string& file) {
  static const std::uint16_t len_base[29] = {3,  4,  5,  6,  7,  8,  9,  10, 11,  13,
                                             15, 17, 19, 23, 27, 31, 35, 43, 51,  59,
                                             67, 83, 99, 115, 131, 163, 195, 227, 258};
  static const std::uint8_t len_extra[29] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                             2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
  static const std::uint16_t dist_base[30] = {1,    2,    3,    4,    5,    7,     9,    13,
                                              17,   25,   33,   49,   65,   97,    129,  193,
                                              257,  385,  513,  769,  1025, 1537,  2049, 3073,
                                              4097, 6145, 8193, 12289, 16385, 24577};
  static const std::uint8_t dist_extra[30] = {0, 0, 0, 0, 1, 1, 2, 2,  3,  3,  4,  4,  5,  5, 6,
                                              6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

  BitReader br(data, n, file);
  std::vector<std::uint8_t> out;
  bool final_block = false;
  while (!final_block) {
    final_block = br.bits(1) != 0;
    std::uint32_t type = br.bits(2);
    if (type == 0) {
      br.align_byte();
      if (br.pos + 4 > br.n) throw IoError("truncated image file " + file);
      std::uint32_t len = br.p[br.pos] | (br.p[br.pos + 1] << 8);
      std::uint32_t nlen = br.p[br.pos + 2] | (br.p[br.pos + 3] << 8);
      br.pos += 4;
      if ((len ^ 0xffffu) != nlen) throw IoError("corrupt stored block in " + file);
      if (br.pos + len > br.n) throw IoError("truncated image file " + file);
      out.insert(out.end(), br.p + br.pos, br.p + br.pos + len);
      br.pos += len;
    } else if (type == 1 || type == 2) {
      Huffman lit, dist;
      if (type == 1) {
        std::uint8_t ll[288];
        for (int i = 0; i < 144; ++i) ll[i] = 8;
        for (int i = 144; i < 256; ++i) ll[i] = 9;
        for (int i = 256; i < 280; ++i) ll[i] = 7;
        for (int i = 280; i < 288; ++i) ll[i] = 8;
        std::uint8_t dl[30];
        for (int i = 0; i < 30; ++i) dl[i] = 5;
        lit.build(ll, 288, file);
        dist.build(dl, 30, file);
      } else {
        std::uint32_t hlit = br.bits(5) + 257;
        std::uint32_t hdist = br.bits(5) + 1;
        std::uint32_t hclen = br.bits(4) + 4;
        static const int order[19] = {16, 17, 18, 0, 8,  7, 9,  6, 10, 5,
                                      11, 4,  12, 3, 13, 2, 14, 1, 15};
        std::uint8_t clen[19] = {};
        for (std::uint32_t i = 0; i < hclen; ++i)
          clen[order[i]] = static_cast<std::uint8_t>(br.bits(3));
        Huffman code_huff;
        code_huff.build(clen, 19, file);
        std::vector<std::uint8_t> lens;
        lens.reserve(hlit + hdist);
        while (lens.size() < hlit + hdist) {
          std::uint16_t sym = code_huff.decode(br);
          if (sym < 16) {
            lens.push_back(static_cast<std::uint8_t>(sym));
          } else if (sym == 16) {
            if (lens.empty()) throw IoError("corrupt deflate stream in " + file);
            std::uint32_t rep = 3 + br.bits(2);
            lens.insert(lens.end(), rep, lens.back());
          } else if (sym == 17) {
            std::uint32_t rep = 3 + br.bits(3);
            lens.insert(lens.end(), rep, 0);
          } else {
            std::uint32_t rep = 11 + br.bits(7);
            lens.insert(lens.end(), rep, 0);
          }
        }
        if (lens.size() != hlit + hdist) throw IoError("corrupt deflate stream in " + file);
        lit.build(lens.data(), hlit, file);
        dist.build(lens.data() + hlit, hdist, file);
      }
      while (true) {
        std::uint16_t sym = lit.decode(br);
        if (sym < 256) {
          out.push_back(static_cast<std::uint8_t>(sym));
        } else if (sym == 256) {
          break;
        } else {
          if (sym - 257 >= 29) throw IoError("corrupt deflate stream in " + file);
          std::uint32_t length = len_base[sym - 257] + br.bits(len_extra[sym - 257]);
          std::uint16_t dsym = dist.decode(br);
          if (dsym >= 30) throw IoError("corrupt deflate stream in " + file);
          std::uint32_t d = dist_base[dsym] + br.bits(dist_extra[dsym]);
          if (d > out.size()) throw IoError("corrupt deflate stream in " + file);
          std::size_t start = out.size() - d;
          for (std::uint32_t i = 0; i < length; ++i) out.push_back(out[start + i]);
        }
      }
    } else {
      throw IoError("corrupt deflate block type in " + file);
    }
  }
  return out;
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void quantize_u8(Image& img) {
  for (float& v : img.data) v = from_u8(to_u8(v));
}

void write_ppm(const std::string& path, const Image& img) {
  if (img.channels != 3) throw IoError("ppm: only 3-channel images supported");
  std::vector<std::uint8_t> bytes;
  std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  bytes.insert(bytes.end(), header.begin(), header.end());
  for (float v : img.data) bytes.push_back(to_u8(v));
  write_file(path, bytes);
}

Image read_ppm(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) ++pos;
    if (start == pos) throw IoError("truncated image file " + path);
    return std::string(bytes.begin() + start, bytes.begin() + pos);
  };
  if (token() != "P6") throw IoError(path + ": not a binary PPM");
  int w = std::stoi(token());
  int h = std::stoi(token());
  int maxval = std::stoi(token());
  if (w < 1 || h < 1 || maxval != 255) throw IoError(path + ": unsupported PPM header");
  ++pos;  // single whitespace after maxval
  std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() - pos < need) throw IoError("truncated image file " + path);
  Image img(h, w, 3);
  for (std::size_t i = 0; i < need; ++i) img.data[i] = from_u8(bytes[pos + i]);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.channels != 3) throw IoError("png: only 3-channel images supported");
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (img.width * 3 + 1));
  for (int v = 0; v < img.height; ++v) {
    raw.push_back(0);  // filter: none
    for (int u = 0; u < img.width; ++u)
      for (int c = 0; c < 3; ++c) raw.push_back(to_u8(img.at(v, u, c)));
  }
  // zlib wrapper with stored deflate blocks
  std::vector<std::uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t off = 0;
  while (true) {
    std::size_t chunk = std::min<std::size_t>(raw.size() - off, 65535);
    bool last = off + chunk == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<std::uint8_t>(chunk & 0xff));
    z.push_back(static_cast<std::uint8_t>(chunk >> 8));
    z.push_back(static_cast<std::uint8_t>(~chunk & 0xff));
    z.push_back(static_cast<std::uint8_t>((~chunk >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + off, raw.begin() + off + chunk);
    off += chunk;
    if (last) break;
  }
  put_u32_be(z, adler32(raw.data(), raw.size()));

  std::vector<std::uint8_t> out = {137, 'P', 'N', 'G', 13, 10, 26, 10};
  auto chunk = [&](const char* type, const std::vector<std::uint8_t>& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    put_u32_be(out, crc32_update(0, out.data() + start, out.size() - start));
  };
  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", {});
  write_file(path, out);
}

Image read_png(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  static const std::uint8_t sig[8] = {137, 'P', 'N', 'G', 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw IoError(path + ": not a PNG file");
  std::size_t pos = 8;
  auto u32 = [&](std::size_t at) -> std::uint32_t {
    return (static_cast<std::uint32_t>(bytes[at]) << 24) | (bytes[at + 1] << 16) |
           (bytes[at + 2] << 8) | bytes[at + 3];
  };
  int width = 0, height = 0, color_type = -1;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = u32(pos);
    std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    if (pos + 12 + len > bytes.size()) throw IoError("truncated image file " + path);
    const std::uint8_t* data = bytes.data() + pos + 8;
    if (type == "IHDR") {
      width = static_cast<int>(u32(pos + 8));
      height = static_cast<int>(u32(pos + 12));
      int bit_depth = data[8];
      color_type = data[9];
      int interlace = data[12];
      if (bit_depth != 8 || interlace != 0 ||
          (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6))
        throw IoError(path + ": unsupported PNG format (need 8-bit non-interlaced)");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (width < 1 || height < 1 || idat.size() < 2) throw IoError("truncated image file " + path);
  std::vector<std::uint8_t> raw = inflate(idat.data() + 2, idat.size() - 2, path);
  int nch = color_type == 0 ? 1 : color_type == 2 ? 3 : color_type == 4 ? 2 : 4;
  std::size_t stride = static_cast<std::size_t>(width) * nch;
  if (raw.size() < (stride + 1) * static_cast<std::size_t>(height))
    throw IoError("truncated image file " + path);
  // undo per-row filters in place
  std::vector<std::uint8_t> pix(static_cast<std::size_t>(height) * stride);
  for (int y = 0; y < height; ++y) {
    std::uint8_t filter = raw[y * (stride + 1)];
    const std::uint8_t* src = raw.data() + y * (stride + 1) + 1;
    std::uint8_t* dst = pix.data() + y * stride;
    const std::uint8_t* up = y > 0 ? pix.data() + (y - 1) * stride : nullptr;
    for (std::size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<std::size_t>(nch) ? dst[i - nch] : 0;
      int b = up ? up[i] : 0;
      int c = (up && i >= static_cast<std::size_t>(nch)) ? up[i - nch] : 0;
      int x = src[i];
      switch (filter) {
        case 0: dst[i] = static_cast<std::uint8_t>(x); break;
        case 1: dst[i] = static_cast<std::uint8_t>(x + a); break;
        case 2: dst[i] = static_cast<std::uint8_t>(x + b); break;
        case 3: dst[i] = static_cast<std::uint8_t>(x + (a + b) / 2); break;
        case 4: dst[i] = static_cast<std::uint8_t>(x + paeth(a, b, c)); break;
        default: throw IoError(path + ": unsupported PNG filter");
      }
    }
  }
  Image img(height, width, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::uint8_t* p = pix.data() + y * stride + static_cast<std::size_t>(x) * nch;
      float r, g, b;
      if (nch <= 2) {
        r = g = b = from_u8(p[0]);
      } else {
        r = from_u8(p[0]);
        g = from_u8(p[1]);
        b = from_u8(p[2]);
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  in.close();
  if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  return read_png(path);
}

}  // namespace nvs
