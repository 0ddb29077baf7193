#pragma once

#include <memory>
#include <string>

#include "vqct/pipeline.hpp"

namespace vqct {

/// Operator HTTP interface over one loaded volume. One pipeline job at a
/// time; a second POST /api/run while one is active answers 409.
///
/// Slice images: axis z gives an nx × ny image (row j); axes x and y give
/// ny × nz and nx × nz images with the cranial end at the top.
class ViewerServer {
 public:
  ViewerServer(Volume vol, PipelineConfig cfg);
  ~ViewerServer();
  ViewerServer(const ViewerServer&) = delete;
  ViewerServer& operator=(const ViewerServer&) = delete;

  /// Binds to an ephemeral port and returns it (for tests).
  int bind_any(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Serves until stop(); blocks.
  void listen();
  void stop();
  /// Blocks until the current job, if any, has finished.
  void wait_for_job();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Window-levelled 8-bit slice; throws on a bad axis or index.
std::vector<std::uint8_t> render_slice(const Volume& vol, char axis, int index, double lo, double hi,
                                       int& width, int& height);
/// RGBA overlay: transparent background, tinted foreground.
std::vector<std::uint8_t> render_mask_slice(const Mask& mask, char axis, int index, int& width,
                                            int& height);

}  // namespace vqct
