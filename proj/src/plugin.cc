#include "livobench/plugin.h"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "livobench/error.h"
#include "livobench/textio.h"

namespace livobench {

namespace {

template <typename T>
void Put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T Get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) {
    throw Error(ErrorCode::kProtocolError,
                "response truncated at byte " + std::to_string(in.size()));
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

constexpr std::size_t kHeaderBytes = 4 + 8 + 4 + 4 + 1;
constexpr std::uint32_t kMaxDescDim = 512;
constexpr std::uint32_t kMaxCount = 1u << 20;

using Clock = std::chrono::steady_clock;

}  // namespace

std::string EncodeRequest(std::uint64_t frame_id, const GrayImage& img) {
  std::string out = "FXT1";
  Put<std::uint64_t>(out, frame_id);
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(img.width()));
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(img.height()));
  out.append(reinterpret_cast<const char*>(img.data().data()), img.data().size());
  return out;
}

ExtractorOutput DecodeResponse(const std::string& bytes, std::uint64_t frame_id,
                               int width, int height, double min_confidence) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "FXR1") != 0) {
    throw Error(ErrorCode::kProtocolError, "bad response magic");
  }
  std::size_t pos = 4;
  const auto fid = Get<std::uint64_t>(bytes, pos);
  if (fid != frame_id) {
    throw Error(ErrorCode::kProtocolError, "frame_id " + std::to_string(fid) +
                                               " does not echo " + std::to_string(frame_id));
  }
  const auto count = Get<std::uint32_t>(bytes, pos);
  const auto dim = Get<std::uint32_t>(bytes, pos);
  const auto kind = Get<std::uint8_t>(bytes, pos);
  if (kind > 1) throw Error(ErrorCode::kProtocolError, "unknown desc_kind " + std::to_string(kind));
  if (dim == 0 || dim > kMaxDescDim) {
    throw Error(ErrorCode::kProtocolError, "desc_dim " + std::to_string(dim) + " out of range");
  }
  const std::size_t elem = kind == 0 ? 1 : 4;
  const std::size_t expected = kHeaderBytes + std::size_t(count) * 12 + std::size_t(count) * dim * elem;
  if (bytes.size() != expected) {
    throw Error(ErrorCode::kProtocolError, "response length " + std::to_string(bytes.size()) +
                                               ", expected " + std::to_string(expected));
  }
  std::vector<Keypoint> kps(count);
  for (auto& kp : kps) {
    kp.x = Get<float>(bytes, pos);
    kp.y = Get<float>(bytes, pos);
    kp.score = Get<float>(bytes, pos);
    if (!(kp.x >= 0.0 && kp.x < width && kp.y >= 0.0 && kp.y < height)) {
      throw Error(ErrorCode::kProtocolError, "keypoint (" + FormatDouble(kp.x) + ", " +
                                                 FormatDouble(kp.y) + ") outside image");
    }
    if (!std::isfinite(kp.score)) throw Error(ErrorCode::kProtocolError, "non-finite score");
  }
  ExtractorOutput out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Descriptor d;
    if (kind == 0) {
      d.kind = DescriptorKind::kBinary;
      d.bits.assign(bytes.begin() + pos, bytes.begin() + pos + dim);
      pos += dim;
    } else {
      d.kind = DescriptorKind::kFloat;
      d.values.resize(dim);
      double n2 = 0.0;
      for (auto& v : d.values) {
        v = Get<float>(bytes, pos);
        n2 += double(v) * v;
      }
      if (!(std::abs(std::sqrt(n2) - 1.0) <= 1e-3)) {
        throw Error(ErrorCode::kProtocolError,
                    "float descriptor " + std::to_string(i) + " is not L2-normalized");
      }
    }
    if (kps[i].score < min_confidence) continue;
    out.keypoints.push_back(kps[i]);
    out.descriptors.push_back(std::move(d));
  }
  return out;
}

double ExtractorClient::TimeoutFromEnv(double fallback) {
  const char* env = std::getenv("LIVOBENCH_PLUGIN_TIMEOUT_S");
  if (env == nullptr) return fallback;
  const auto v = ParseDouble(env);
  return v && *v > 0.0 ? *v : fallback;
}

ExtractorClient::ExtractorClient(const std::string& command, double timeout_s,
                                 double min_confidence)
    : timeout_s_(timeout_s), min_confidence_(min_confidence) {
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0 || ::pipe2(out_pipe, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::kPluginCrashed, std::string("pipe: ") + std::strerror(errno));
  }
  pid_ = ::fork();
  if (pid_ < 0) {
    throw Error(ErrorCode::kPluginCrashed, std::string("fork: ") + std::strerror(errno));
  }
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    const std::string line = "exec " + command;
    ::execl("/bin/sh", "sh", "-c", line.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];

  char hello[8];
  try {
    ReadExact(hello, 8);
  } catch (...) {
    Shutdown();
    throw;
  }
  std::uint32_t version;
  std::memcpy(&version, hello + 4, 4);
  if (std::memcmp(hello, "FXHI", 4) != 0 || version != 1) {
    Shutdown();
    throw Error(ErrorCode::kProtocolError, "bad handshake from extractor '" + command + "'");
  }
}

ExtractorClient::~ExtractorClient() { Shutdown(); }

void ExtractorClient::Shutdown() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    // Give a well-behaved plug-in a moment to exit on EOF, then kill it.
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      ::usleep(2000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void ExtractorClient::FailCrashed(const std::string& what) {
  std::string detail = what;
  if (pid_ > 0) {
    int status = 0;
    if (::waitpid(pid_, &status, 0) == pid_) {
      pid_ = -1;
      if (WIFEXITED(status)) detail += " (exit status " + std::to_string(WEXITSTATUS(status)) + ")";
      if (WIFSIGNALED(status)) detail += " (signal " + std::to_string(WTERMSIG(status)) + ")";
    }
  }
  Shutdown();
  throw Error(ErrorCode::kPluginCrashed, detail);
}

void ExtractorClient::ReadExact(char* out, std::size_t n) {
  if (from_child_ < 0) throw Error(ErrorCode::kPluginCrashed, "extractor not running");
  const auto deadline = Clock::now() + std::chrono::duration<double>(timeout_s_);
  std::size_t got = 0;
  while (got < n) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) {
      Shutdown();
      throw Error(ErrorCode::kPluginTimeout,
                  "no response within " + FormatDouble(timeout_s_) + " s");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) continue;
    const ssize_t r = ::read(from_child_, out + got, n - got);
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) FailCrashed("extractor closed its output");
    received_.append(out + got, static_cast<std::size_t>(r));
    got += static_cast<std::size_t>(r);
  }
}

void ExtractorClient::WriteAll(const char* data, std::size_t n) {
  if (to_child_ < 0) throw Error(ErrorCode::kPluginCrashed, "extractor not running");
  const auto deadline = Clock::now() + std::chrono::duration<double>(timeout_s_);
  std::size_t put = 0;
  while (put < n) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) {
      Shutdown();
      throw Error(ErrorCode::kPluginTimeout, "extractor stopped reading requests");
    }
    pollfd pfd{to_child_, POLLOUT, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) continue;
    const ssize_t w = ::write(to_child_, data + put, n - put);
    if (w < 0 && errno == EINTR) continue;
    if (w <= 0) FailCrashed("extractor closed its input");
    put += static_cast<std::size_t>(w);
  }
  sent_.append(data, n);
}

ExtractorOutput ExtractorClient::Extract(const GrayImage& img, std::uint64_t frame_id) {
  const std::string req = EncodeRequest(frame_id, img);
  WriteAll(req.data(), req.size());
  std::string resp(kHeaderBytes, '\0');
  ReadExact(resp.data(), kHeaderBytes);
  if (resp.compare(0, 4, "FXR1") != 0) {
    throw Error(ErrorCode::kProtocolError, "bad response magic");
  }
  std::uint32_t count, dim;
  std::memcpy(&count, resp.data() + 12, 4);
  std::memcpy(&dim, resp.data() + 16, 4);
  const std::uint8_t kind = static_cast<std::uint8_t>(resp[20]);
  if (kind > 1 || dim == 0 || dim > kMaxDescDim || count > kMaxCount) {
    throw Error(ErrorCode::kProtocolError, "bad response header");
  }
  const std::size_t body = std::size_t(count) * 12 + std::size_t(count) * dim * (kind == 0 ? 1 : 4);
  resp.resize(kHeaderBytes + body);
  if (body > 0) ReadExact(resp.data() + kHeaderBytes, body);
  return DecodeResponse(resp, frame_id, img.width(), img.height(), min_confidence_);
}

}  // namespace livobench
