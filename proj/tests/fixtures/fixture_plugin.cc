// Test double for the extractor protocol. Usage: fixture_plugin <mode>
//   echo       one keypoint at the image center, score 1, fixed 32-byte descriptor
//   grid       keypoints on a 40 px lattice, descriptor = hash of the 8x8 patch
//   float      like echo, one L2-normalized float descriptor (dim 4)
//   lowscore   echo plus a second keypoint with score 0.05
//   oob        one keypoint at x = width + 5
//   badmagic   response magic "FXR2"
//   wrongid    echoes frame_id + 1
//   short      response one byte shorter than declared
//   unnorm     float descriptor with norm 2
//   crash      exits after the handshake, before answering
//   hang       never answers
//   nohello    exits without a handshake
//   badversion handshake version 2

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

namespace {

template <typename T>
void Put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

bool ReadExact(void* dst, std::size_t n) {
  auto* p = static_cast<char*>(dst);
  while (n > 0) {
    const ssize_t r = ::read(STDIN_FILENO, p, n);
    if (r <= 0) return false;
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

void WriteAll(const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t w = ::write(STDOUT_FILENO, s.data() + off, s.size() - off);
    if (w <= 0) return;
    off += static_cast<std::size_t>(w);
  }
}

struct Kp {
  float x, y, score;
};

std::string Header(const char* magic, std::uint64_t id, std::uint32_t count, std::uint32_t dim,
                   std::uint8_t kind) {
  std::string out(magic, 4);
  Put(out, id);
  Put(out, count);
  Put(out, dim);
  Put(out, kind);
  return out;
}

std::string BinaryResponse(const char* magic, std::uint64_t id, const std::vector<Kp>& kps,
                           const std::vector<std::vector<std::uint8_t>>& desc) {
  std::string out = Header(magic, id, static_cast<std::uint32_t>(kps.size()), 32, 0);
  for (const Kp& k : kps) {
    Put(out, k.x);
    Put(out, k.y);
    Put(out, k.score);
  }
  for (const auto& d : desc) out.append(reinterpret_cast<const char*>(d.data()), d.size());
  return out;
}

std::vector<std::uint8_t> FixedDescriptor() {
  std::vector<std::uint8_t> d(32);
  for (int i = 0; i < 32; ++i) d[i] = static_cast<std::uint8_t>(i * 7 + 1);
  return d;
}

std::vector<std::uint8_t> PatchHash(const std::vector<std::uint8_t>& px, std::uint32_t w, int cx,
                                    int cy) {
  std::vector<std::uint8_t> d(32);
  std::uint64_t h = 1469598103934665603ULL;
  for (int y = cy - 4; y < cy + 4; ++y) {
    for (int x = cx - 4; x < cx + 4; ++x) {
      h = (h ^ px[std::size_t(y) * w + x]) * 1099511628211ULL;
    }
  }
  for (int i = 0; i < 32; ++i) {
    h = (h ^ static_cast<std::uint64_t>(i)) * 1099511628211ULL;
    d[i] = static_cast<std::uint8_t>(h >> 56);
  }
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "echo";
  if (mode == "nohello") return 0;

  std::string hello = "FXHI";
  Put<std::uint32_t>(hello, mode == "badversion" ? 2 : 1);
  WriteAll(hello);
  if (mode == "crash") return 3;

  for (;;) {
    char magic[4];
    std::uint64_t id = 0;
    std::uint32_t w = 0, h = 0;
    if (!ReadExact(magic, 4)) return 0;
    if (std::memcmp(magic, "FXT1", 4) != 0 || !ReadExact(&id, 8) || !ReadExact(&w, 4) ||
        !ReadExact(&h, 4)) {
      std::fprintf(stderr, "fixture: malformed request\n");
      return 1;
    }
    std::vector<std::uint8_t> px(std::size_t(w) * h);
    if (!ReadExact(px.data(), px.size())) {
      std::fprintf(stderr, "fixture: truncated request\n");
      return 1;
    }
    if (mode == "hang") {
      ::pause();
      return 0;
    }

    const float cx = static_cast<float>(w / 2), cy = static_cast<float>(h / 2);
    std::string resp;
    if (mode == "echo" || mode == "short") {
      resp = BinaryResponse("FXR1", id, {{cx, cy, 1.0f}}, {FixedDescriptor()});
      if (mode == "short") resp.pop_back();
    } else if (mode == "lowscore") {
      resp = BinaryResponse("FXR1", id, {{cx, cy, 1.0f}, {10.0f, 10.0f, 0.05f}},
                            {FixedDescriptor(), FixedDescriptor()});
    } else if (mode == "badmagic") {
      resp = BinaryResponse("FXR2", id, {{cx, cy, 1.0f}}, {FixedDescriptor()});
    } else if (mode == "wrongid") {
      resp = BinaryResponse("FXR1", id + 1, {{cx, cy, 1.0f}}, {FixedDescriptor()});
    } else if (mode == "oob") {
      resp = BinaryResponse("FXR1", id, {{static_cast<float>(w + 5), cy, 1.0f}},
                            {FixedDescriptor()});
    } else if (mode == "float" || mode == "unnorm") {
      resp = Header("FXR1", id, 1, 4, 1);
      Put(resp, cx);
      Put(resp, cy);
      Put(resp, 1.0f);
      const float v = mode == "float" ? 0.5f : 1.0f;
      for (int i = 0; i < 4; ++i) Put(resp, v);
    } else if (mode == "grid") {
      std::vector<Kp> kps;
      std::vector<std::vector<std::uint8_t>> desc;
      for (std::uint32_t y = 40; y + 4 < h; y += 40) {
        for (std::uint32_t x = 40; x + 4 < w; x += 40) {
          kps.push_back({static_cast<float>(x), static_cast<float>(y), 1.0f});
          desc.push_back(PatchHash(px, w, static_cast<int>(x), static_cast<int>(y)));
        }
      }
      resp = BinaryResponse("FXR1", id, kps, desc);
    } else {
      std::fprintf(stderr, "fixture: unknown mode %s\n", mode.c_str());
      return 2;
    }
    WriteAll(resp);
  }
}
