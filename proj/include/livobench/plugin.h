#pragma once

#include <sys/types.h>

#include <cstdint>
#include <string>
#include <vector>

#include "livobench/features.h"
#include "livobench/imaging.h"

namespace livobench {

struct ExtractorOutput {
  std::vector<Keypoint> keypoints;  // level 0, angle 0
  std::vector<Descriptor> descriptors;
};

/// Wire format helpers. All integers and floats little-endian.
std::string EncodeRequest(std::uint64_t frame_id, const GrayImage& img);

/// Parses a complete FXR1 response. Keypoints below `min_confidence` are
/// dropped; out-of-image keypoints, bad magic, frame-id mismatch, length
/// mismatch and non-normalized float descriptors raise kProtocolError.
ExtractorOutput DecodeResponse(const std::string& bytes, std::uint64_t frame_id,
                               int width, int height, double min_confidence);

/// Child process speaking the FXHI/FXT1/FXR1 protocol on stdin/stdout.
/// The command is run through /bin/sh. One request in flight at a time.
class ExtractorClient {
 public:
  ExtractorClient(const std::string& command, double timeout_s, double min_confidence);
  ~ExtractorClient();
  ExtractorClient(const ExtractorClient&) = delete;
  ExtractorClient& operator=(const ExtractorClient&) = delete;

  /// Throws kProtocolError, kPluginTimeout or kPluginCrashed.
  ExtractorOutput Extract(const GrayImage& img, std::uint64_t frame_id);

  /// Bytes exchanged so far, in order, for protocol captures.
  const std::string& sent() const { return sent_; }
  const std::string& received() const { return received_; }

  /// LIVOBENCH_PLUGIN_TIMEOUT_S if set and valid, else `fallback`.
  static double TimeoutFromEnv(double fallback = 10.0);

 private:
  void ReadExact(char* out, std::size_t n);
  void WriteAll(const char* data, std::size_t n);
  [[noreturn]] void FailCrashed(const std::string& what);
  void Shutdown();

  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  double timeout_s_;
  double min_confidence_;
  std::string sent_;
  std::string received_;
};

}  // namespace livobench
