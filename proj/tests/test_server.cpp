#include <doctest.h>

#include <thread>

#include "fixtures.hpp"
#include "vqct/server.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a _res macro.
#include <httplib.h>
#include <zlib.h>

using namespace vqct;
using nlohmann::json;

namespace {

struct Png {
  int width = 0, height = 0, color_type = -1;
  std::vector<std::uint8_t> pixels;  // filter bytes removed
};

std::uint32_t be32(const std::string& s, std::size_t at) {
  return (std::uint32_t(std::uint8_t(s[at])) << 24) | (std::uint32_t(std::uint8_t(s[at + 1])) << 16) |
         (std::uint32_t(std::uint8_t(s[at + 2])) << 8) | std::uint32_t(std::uint8_t(s[at + 3]));
}

// Enough of a decoder for 8-bit unfiltered images, checking chunk CRCs.
Png decode_png(const std::string& s) {
  REQUIRE(s.size() > 8);
  REQUIRE(s.compare(0, 8, std::string("\x89PNG\r\n\x1a\n", 8)) == 0);
  Png png;
  std::string idat;
  for (std::size_t at = 8; at + 12 <= s.size();) {
    const std::uint32_t len = be32(s, at);
    const std::string type = s.substr(at + 4, 4);
    const std::string data = s.substr(at + 8, len);
    const std::string body = s.substr(at + 4, 4 + len);
    CHECK(be32(s, at + 8 + len) ==
          crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    if (type == "IHDR") {
      png.width = static_cast<int>(be32(data, 0));
      png.height = static_cast<int>(be32(data, 4));
      CHECK(data[8] == 8);
      png.color_type = data[9];
    } else if (type == "IDAT") {
      idat += data;
    }
    at += 12 + len;
  }
  const int channels = png.color_type == 6 ? 4 : 1;
  const std::size_t row = static_cast<std::size_t>(png.width) * channels;
  uLongf len = static_cast<uLongf>((row + 1) * png.height);
  std::vector<std::uint8_t> raw(len);
  REQUIRE(uncompress(raw.data(), &len, reinterpret_cast<const Bytef*>(idat.data()),
                     static_cast<uLong>(idat.size())) == Z_OK);
  REQUIRE(len == raw.size());
  for (int y = 0; y < png.height; ++y) {
    const std::uint8_t* r = raw.data() + y * (row + 1);
    REQUIRE(r[0] == 0);
    png.pixels.insert(png.pixels.end(), r + 1, r + 1 + row);
  }
  return png;
}

// Server on an ephemeral port, listening on its own thread.
struct Running {
  ViewerServer server;
  int port;
  std::thread thread;

  Running(Volume v, PipelineConfig c) : server(std::move(v), std::move(c)), port(server.bind_any()) {
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen(); });
  }
  ~Running() {
    server.wait_for_job();
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

Volume ramp() {
  Volume v(Geometry(Index3(4, 3, 2), Eigen::Array3d(1.0, 2.0, 3.0), Vec3(-1.0, 0.0, 5.0)), 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
  return v;
}

}  // namespace

TEST_CASE("meta, slices and seeds") {
  Running s(ramp(), PipelineConfig{});
  auto c = s.client();

  auto meta = c.Get("/api/meta");
  REQUIRE(meta);
  CHECK(meta->status == 200);
  const json m = json::parse(meta->body);
  CHECK(m["dims"] == json::array({4, 3, 2}));
  CHECK(m["spacing_mm"] == json::array({1.0, 2.0, 3.0}));
  CHECK(m["origin_mm"] == json::array({-1.0, 0.0, 5.0}));
  CHECK(m["value_range"] == json::array({0.0, 23.0}));

  SUBCASE("axial slice is window-levelled row by row") {
    auto r = c.Get("/api/slice?axis=z&index=1&window=12,23");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    const Png png = decode_png(r->body);
    CHECK(png.width == 4);
    CHECK(png.height == 3);
    CHECK(png.color_type == 0);
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 4; ++i) {
        const double v = 12 + i + 4 * j;  // voxel (i, j, 1)
        CHECK(png.pixels[j * 4 + i] == std::lround(255.0 * (v - 12.0) / 11.0));
      }
  }
  SUBCASE("sagittal slice puts the cranial end on top") {
    const Png png = decode_png(c.Get("/api/slice?axis=x&index=0&window=0,23")->body);
    CHECK(png.width == 3);
    CHECK(png.height == 2);
    CHECK(png.pixels[0] == std::lround(255.0 * 12 / 23));  // (0, 0, 1)
    CHECK(png.pixels[3] == 0);                             // (0, 0, 0)
  }
  SUBCASE("bad slice requests answer 400") {
    for (const char* q : {"/api/slice?axis=z&index=2", "/api/slice?axis=q&index=0", "/api/slice?axis=z",
                          "/api/slice?axis=z&index=1x", "/api/slice?axis=z&index=0&window=5,5",
                          "/api/slice?axis=z&index=-1"}) {
      CAPTURE(q);
      auto r = c.Get(q);
      REQUIRE(r);
      CHECK(r->status == 400);
      CHECK(json::parse(r->body).contains("error"));
    }
  }
  SUBCASE("seeds round-trip and invalid ones are refused") {
    CHECK(json::parse(c.Get("/api/seeds")->body)["levels"].empty());
    const json seeds = {{"levels", {{{"name", "L1"}, {"center_mm", {1.0, 2.0, 3.0}}}}}};
    auto post = c.Post("/api/seeds", seeds.dump(), "application/json");
    REQUIRE(post);
    CHECK(post->status == 200);
    CHECK(json::parse(c.Get("/api/seeds")->body) == json::parse(post->body));
    CHECK(json::parse(c.Get("/api/seeds")->body)["levels"][0]["name"] == "L1");
    CHECK(c.Post("/api/seeds", "{not json", "application/json")->status == 400);
    CHECK(c.Post("/api/seeds", R"({"levels": []})", "application/json")->status == 400);
    // The earlier seeds survive a refused update.
    CHECK(json::parse(c.Get("/api/seeds")->body)["levels"].size() == 1);
  }
  SUBCASE("nothing to show before a run") {
    CHECK(c.Get("/api/report")->status == 404);
    CHECK(c.Get("/api/mask-slice?name=body&axis=z&index=0")->status == 404);
    CHECK(c.Get("/api/job/1")->status == 404);
    CHECK(c.Post("/api/run", "", "application/json")->status == 400);
  }
}

TEST_CASE("one job at a time, then masks and report") {
  const Phantom& ph = testing::default_phantom();
  Running s(ph.volume, PipelineConfig{});
  auto c = s.client();

  SeedSet seeds = phantom_seeds(ph.truth);
  seeds.levels = {seeds.levels[1]};
  json sj;
  to_json(sj, seeds);
  REQUIRE(c.Post("/api/seeds", sj.dump(), "application/json")->status == 200);

  auto first = c.Post("/api/run", "", "application/json");
  REQUIRE(first);
  CHECK(first->status == 202);
  const int id = json::parse(first->body)["job"];
  auto second = c.Post("/api/run", "", "application/json");
  REQUIRE(second);
  CHECK(second->status == 409);

  const json running = json::parse(c.Get("/api/job/" + std::to_string(id))->body);
  CHECK(running.contains("stage"));
  CHECK(running["percent"].get<double>() >= 0.0);

  s.server.wait_for_job();
  const json done = json::parse(c.Get("/api/job/" + std::to_string(id))->body);
  CHECK(done["done"] == true);
  CHECK(done["percent"] == 100.0);
  CHECK(done["error"].is_null());
  CHECK(done["failed_levels"] == 0);
  CHECK(c.Get("/api/job/" + std::to_string(id + 1))->status == 404);

  auto report = c.Get("/api/report");
  REQUIRE(report);
  CHECK(report->status == 200);
  CHECK(json::parse(report->body)["levels"]["L2"]["vois"].size() == 3);

  // Axial slice through the L2 body center.
  const Geometry& g = ph.volume.geometry();
  const Vec3 idx = g.world_to_voxel(ph.truth.levels[1].center);
  const int k = static_cast<int>(std::lround(idx.z()));
  auto mask = c.Get("/api/mask-slice?name=body&axis=z&index=" + std::to_string(k));
  REQUIRE(mask);
  CHECK(mask->status == 200);
  const Png png = decode_png(mask->body);
  CHECK(png.color_type == 6);
  CHECK(png.width == g.dims.x());
  CHECK(png.height == g.dims.y());
  const int ci = static_cast<int>(std::lround(idx.x())), cj = static_cast<int>(std::lround(idx.y()));
  CHECK(png.pixels[4 * (cj * png.width + ci) + 3] > 0);  // body center is covered
  CHECK(png.pixels[3] == 0);                             // corner is not

  CHECK(c.Get("/api/mask-slice?name=nonsense&axis=z&index=0")->status == 404);
  CHECK(c.Get("/api/mask-slice?name=body&axis=z&index=100000")->status == 400);

  // A later run replaces the cached result.
  REQUIRE(c.Post("/api/run", "", "application/json")->status == 202);
}
