#include "advasr/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "advasr/errors.hpp"

namespace advasr {

namespace {

void put_u32(std::vector<unsigned char>& b, uint32_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
  b.push_back((v >> 16) & 0xff);
  b.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<unsigned char>& b, uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t get_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw FormatError(path + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* ck = buf.data() + pos;
    const uint32_t ck_size = get_u32(ck + 4);
    const std::size_t body = pos + 8;
    if (body + ck_size > buf.size()) throw FormatError(path + ": truncated chunk");
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (ck_size < 16) throw FormatError(path + ": short fmt chunk");
      format = get_u16(buf.data() + body);
      channels = get_u16(buf.data() + body + 2);
      rate = get_u32(buf.data() + body + 4);
      bits = get_u16(buf.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data_off = body;
      data_len = ck_size;
    }
    pos = body + ck_size + (ck_size & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_off == 0) throw FormatError(path + ": missing fmt/data chunk");
  if (format != 1) throw FormatError(path + ": not PCM");
  if (channels != 1) throw FormatError(path + ": expected mono, got " + std::to_string(channels));
  if (bits != 16) throw FormatError(path + ": expected 16-bit samples");
  if (rate != 16000)
    throw FormatError(path + ": expected 16000 Hz, got " + std::to_string(rate));

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const std::size_t n = data_len / 2;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = buf.data() + data_off + 2 * i;
    int16_t s = static_cast<int16_t>(p[0] | (p[1] << 8));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& x) {
  const uint32_t n = static_cast<uint32_t>(x.length());
  const uint32_t data_bytes = n * 2;
  std::vector<unsigned char> b;
  b.reserve(44 + data_bytes);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put_u32(b, 36 + data_bytes);
  b.insert(b.end(), {'W', 'A', 'V', 'E'});
  b.insert(b.end(), {'f', 'm', 't', ' '});
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, static_cast<uint32_t>(x.sample_rate));
  put_u32(b, static_cast<uint32_t>(x.sample_rate) * 2);  // byte rate
  put_u16(b, 2);                                         // block align
  put_u16(b, 16);                                        // bits
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put_u32(b, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    double s = x.samples[i];
    if (s > 1.0) s = 1.0;
    if (s < -1.0) s = -1.0;
    long q = std::lround(s * 32768.0);
    if (q > 32767) q = 32767;
    if (q < -32768) q = -32768;
    put_u16(b, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace advasr
