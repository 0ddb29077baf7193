#include "vqct/server.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "vqct/png.hpp"

namespace vqct {

using nlohmann::json;

namespace {

// Maps output pixel (u, v) to voxel indices for a slice.
template <typename F>
void walk_slice(const Geometry& g, char axis, int index, int& width, int& height, F&& visit) {
  const int nx = g.dims.x(), ny = g.dims.y(), nz = g.dims.z();
  switch (axis) {
    case 'z':
      if (index < 0 || index >= nz) throw Error("slice index out of range");
      width = nx;
      height = ny;
      for (int v = 0; v < ny; ++v)
        for (int u = 0; u < nx; ++u) visit(u, v, g.linear(u, v, index));
      break;
    case 'y':
      if (index < 0 || index >= ny) throw Error("slice index out of range");
      width = nx;
      height = nz;
      for (int v = 0; v < nz; ++v)
        for (int u = 0; u < nx; ++u) visit(u, v, g.linear(u, index, nz - 1 - v));
      break;
    case 'x':
      if (index < 0 || index >= nx) throw Error("slice index out of range");
      width = ny;
      height = nz;
      for (int v = 0; v < nz; ++v)
        for (int u = 0; u < ny; ++u) visit(u, v, g.linear(index, u, nz - 1 - v));
      break;
    default:
      throw Error("axis must be x, y or z");
  }
}

std::array<std::uint8_t, 3> tint(const std::string& name) {
  static const std::map<std::string, std::array<std::uint8_t, 3>> colors = {
      {"vertebra", {255, 200, 0}}, {"body", {255, 64, 64}},     {"process", {64, 160, 255}},
      {"cut", {255, 255, 255}},    {"trabecular", {64, 220, 96}}, {"cylinder", {220, 64, 220}},
      {"pacman", {0, 220, 220}}};
  const auto it = colors.find(name);
  return it == colors.end() ? std::array<std::uint8_t, 3>{255, 0, 0} : it->second;
}

}  // namespace

std::vector<std::uint8_t> render_slice(const Volume& vol, char axis, int index, double lo, double hi,
                                       int& width, int& height) {
  if (!(hi > lo)) throw Error("window must satisfy lo < hi");
  std::vector<std::uint8_t> px;
  walk_slice(vol.geometry(), axis, index, width, height, [&](int, int, std::size_t idx) {
    const double t = std::clamp((vol[idx] - lo) / (hi - lo), 0.0, 1.0);
    px.push_back(static_cast<std::uint8_t>(std::lround(255.0 * t)));
  });
  return px;
}

std::vector<std::uint8_t> render_mask_slice(const Mask& mask, char axis, int index, int& width,
                                            int& height) {
  std::vector<std::uint8_t> px;
  walk_slice(mask.geometry(), axis, index, width, height, [&](int, int, std::size_t idx) {
    const std::uint8_t a = mask[idx] ? 255 : 0;
    px.insert(px.end(), {a, a, a, static_cast<std::uint8_t>(mask[idx] ? 128 : 0)});
  });
  return px;
}

struct Job {
  std::string stage = "queued";
  double percent = 0.0;
  bool done = false;
  std::optional<std::string> error;
  std::size_t failed_levels = 0;
};

struct ViewerServer::Impl {
  Volume vol;
  PipelineConfig cfg;
  double vmin = 0.0, vmax = 1.0;
  httplib::Server http;

  std::mutex mu;
  std::optional<SeedSet> seeds;
  std::map<int, Job> jobs;
  int next_job = 1;
  bool busy = false;
  std::thread worker;
  std::shared_ptr<const PipelineResult> result;
  std::map<std::string, Mask> assembled;  // cache of full-lattice masks

  Impl(Volume v, PipelineConfig c) : vol(std::move(v)), cfg(std::move(c)) {
    if (vol.empty()) throw Error("server needs a non-empty volume");
    const auto [mn, mx] = std::minmax_element(vol.values().begin(), vol.values().end());
    vmin = *mn;
    vmax = *mx > *mn ? *mx : *mn + 1.0;
    routes();
  }

  ~Impl() {
    http.stop();
    if (worker.joinable()) worker.join();
  }

  static void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, {{"error", msg}}, status);
  }

  static char axis_param(const httplib::Request& req) {
    const std::string a = req.has_param("axis") ? req.get_param_value("axis") : "z";
    if (a.size() != 1) throw Error("axis must be x, y or z");
    return a[0];
  }
  static int index_param(const httplib::Request& req) {
    if (!req.has_param("index")) throw Error("missing index");
    try {
      std::size_t used = 0;
      const std::string s = req.get_param_value("index");
      const int v = std::stoi(s, &used);
      if (used != s.size()) throw Error("index must be an integer");
      return v;
    } catch (const std::logic_error&) {
      throw Error("index must be an integer");
    }
  }

  void routes() {
    http.Get("/api/meta", [this](const httplib::Request&, httplib::Response& res) {
      const Geometry& g = vol.geometry();
      send_json(res, {{"dims", {g.dims.x(), g.dims.y(), g.dims.z()}},
                      {"spacing_mm", {g.spacing.x(), g.spacing.y(), g.spacing.z()}},
                      {"origin_mm", {g.origin.x(), g.origin.y(), g.origin.z()}},
                      {"value_range", {vmin, vmax}}});
    });

    http.Get("/api/slice", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        double lo = vmin, hi = vmax;
        if (req.has_param("window")) {
          const std::string w = req.get_param_value("window");
          const auto comma = w.find(',');
          if (comma == std::string::npos) throw Error("window must be lo,hi");
          lo = std::stod(w.substr(0, comma));
          hi = std::stod(w.substr(comma + 1));
        }
        int width = 0, height = 0;
        const auto px = render_slice(vol, axis_param(req), index_param(req), lo, hi, width, height);
        res.set_content(encode_png_gray(px, width, height), "image/png");
      } catch (const std::exception& e) {
        send_error(res, 400, e.what());
      }
    });

    http.Get("/api/seeds", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu);
      json j;
      if (seeds) to_json(j, *seeds);
      else j = {{"levels", json::array()}};
      send_json(res, j);
    });

    http.Post("/api/seeds", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        SeedSet s;
        from_json(json::parse(req.body), s);
        s.validate();
        std::lock_guard<std::mutex> lock(mu);
        seeds = s;
        json j;
        to_json(j, s);
        send_json(res, j);
      } catch (const std::exception& e) {
        send_error(res, 400, e.what());
      }
    });

    http.Post("/api/run", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu);
      if (busy) return send_error(res, 409, "a job is already running");
      if (!seeds) return send_error(res, 400, "no seeds posted");
      if (worker.joinable()) worker.join();
      const int id = next_job++;
      jobs[id] = Job{};
      busy = true;
      worker = std::thread([this, id, s = *seeds] { run_job(id, s); });
      send_json(res, {{"job", id}}, 202);
    });

    http.Get(R"(/api/job/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu);
      const auto it = jobs.find(std::stoi(req.matches[1].str()));
      if (it == jobs.end()) return send_error(res, 404, "unknown job");
      const Job& j = it->second;
      send_json(res, {{"stage", j.stage},
                      {"percent", j.percent},
                      {"done", j.done},
                      {"error", j.error ? json(*j.error) : json(nullptr)},
                      {"failed_levels", j.failed_levels}});
    });

    http.Get("/api/mask-slice", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        if (!req.has_param("name")) throw Error("missing mask name");
        const std::string name = req.get_param_value("name");
        const char axis = axis_param(req);
        const int index = index_param(req);
        std::lock_guard<std::mutex> lock(mu);
        if (!result) return send_error(res, 404, "no completed run");
        auto it = assembled.find(name);
        if (it == assembled.end()) {
          bool known = false;
          for (const auto& l : result->levels) known = known || l.masks.count(name);
          if (!known) return send_error(res, 404, "unknown mask '" + name + "'");
          it = assembled.emplace(name, result->assemble_mask(name, vol.geometry())).first;
        }
        int width = 0, height = 0;
        auto px = render_mask_slice(it->second, axis, index, width, height);
        const auto rgb = tint(name);
        for (std::size_t p = 0; p < px.size(); p += 4)
          if (px[p + 3]) std::copy(rgb.begin(), rgb.end(), px.begin() + static_cast<std::ptrdiff_t>(p));
        res.set_content(encode_png_rgba(px, width, height), "image/png");
      } catch (const std::exception& e) {
        send_error(res, 400, e.what());
      }
    });

    http.Get("/api/report", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard<std::mutex> lock(mu);
      if (!result) return send_error(res, 404, "no completed run");
      send_json(res, result->report);
    });
  }

  void run_job(int id, const SeedSet& s) {
    auto progress = [this, id](const std::string& stage, double pct) {
      std::lock_guard<std::mutex> lock(mu);
      jobs[id].stage = stage;
      jobs[id].percent = pct;
    };
    std::shared_ptr<const PipelineResult> out;
    std::optional<std::string> err;
    try {
      out = std::make_shared<const PipelineResult>(run_pipeline(vol, s, cfg, progress));
    } catch (const std::exception& e) {
      err = e.what();
    }
    std::lock_guard<std::mutex> lock(mu);
    Job& j = jobs[id];
    j.done = true;
    j.percent = 100.0;
    j.stage = err ? "failed" : "done";
    j.error = err;
    if (out) {
      for (const auto& l : out->levels) j.failed_levels += l.ok() ? 0 : 1;
      result = out;
      assembled.clear();
    }
    busy = false;
  }
};

ViewerServer::ViewerServer(Volume vol, PipelineConfig cfg)
    : impl_(std::make_unique<Impl>(std::move(vol), std::move(cfg))) {}

ViewerServer::~ViewerServer() = default;

int ViewerServer::bind_any(const std::string& host) { return impl_->http.bind_to_any_port(host); }

bool ViewerServer::bind(const std::string& host, int port) { return impl_->http.bind_to_port(host, port); }

void ViewerServer::listen() { impl_->http.listen_after_bind(); }

void ViewerServer::stop() { impl_->http.stop(); }

void ViewerServer::wait_for_job() {
  for (;;) {
    {
      std::lock_guard<std::mutex> lock(impl_->mu);
      if (!impl_->busy) return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
}

}  // namespace vqct
