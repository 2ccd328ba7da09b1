#include "trajfield/server.hpp"

#include "trajfield/io.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace trajfield {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using json = nlohmann::json;

std::array<std::uint8_t, kFrameHeaderSize> encode_frame_header(const FrameHeader& h) {
  std::array<std::uint8_t, kFrameHeaderSize> b{};
  auto put = [&](std::size_t at, std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  };
  put(0, kFrameMagic, 4);
  put(4, h.frame_id, 4);
  put(8, h.width, 2);
  put(10, h.height, 2);
  b[12] = h.format;
  return b;
}

std::optional<FrameHeader> decode_frame_header(std::span<const std::uint8_t> b) {
  if (b.size() < kFrameHeaderSize) return std::nullopt;
  auto get = [&](std::size_t at, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
    return v;
  };
  if (get(0, 4) != kFrameMagic) return std::nullopt;
  FrameHeader h;
  h.frame_id = static_cast<std::uint32_t>(get(4, 4));
  h.width = static_cast<std::uint16_t>(get(8, 2));
  h.height = static_cast<std::uint16_t>(get(10, 2));
  h.format = b[12];
  return h;
}

std::vector<std::uint8_t> encode_frame(std::uint32_t frame_id, const ImageRGB& image) {
  if (image.width() > 0xFFFF || image.height() > 0xFFFF)
    throw std::invalid_argument("encode_frame: image too large");
  const auto header = encode_frame_header(
      {frame_id, static_cast<std::uint16_t>(image.width()), static_cast<std::uint16_t>(image.height()),
       kFormatRGB8});
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto rgb = to_rgb8(image);
  out.insert(out.end(), rgb.begin(), rgb.end());
  return out;
}

ClientMessage parse_client_message(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    throw ProtocolError("message needs a string \"type\"");
  const std::string type = j["type"];
  try {
    if (type == "pose") {
      const json& m = j.at("m");
      if (!m.is_array() || m.size() != 16) throw ProtocolError("pose \"m\" must hold 16 numbers");
      PoseMessage p;
      for (int i = 0; i < 16; ++i) {
        if (!m[i].is_number()) throw ProtocolError("pose \"m\" must hold 16 numbers");
        p.camera_to_world(i / 4, i % 4) = m[i].get<double>();
      }
      if (!p.camera_to_world.allFinite()) throw ProtocolError("pose matrix is not finite");
      const Mat3 r = p.camera_to_world.topLeftCorner<3, 3>();
      const double err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
      if (err > kPoseOrthonormalTolerance || r.determinant() <= 0.0)
        throw ProtocolError("pose rotation is not orthonormal");
      if (j.contains("fov_y")) {
        const double f = j["fov_y"].get<double>();
        if (!(f > 0.0 && f < 180.0)) throw ProtocolError("fov_y must lie in (0, 180) degrees");
        p.fov_y_deg = f;
      }
      return p;
    }
    if (type == "config") {
      ConfigMessage c;
      if (j.contains("use_guidance")) c.use_guidance = j["use_guidance"].get<bool>();
      if (j.contains("use_nn")) c.use_nn = j["use_nn"].get<bool>();
      c.reset = j.value("reset", false);
      return c;
    }
    if (type == "resize") return ResizeMessage{j.at("w").get<int>(), j.at("h").get<int>()};
  } catch (const json::exception& e) {
    throw ProtocolError("bad " + type + " message: " + e.what());
  }
  throw ProtocolError("unknown message type '" + type + "'");
}

std::string error_message(const std::string& what) {
  return json{{"type", "error"}, {"message", what}}.dump();
}

RenderSession::RenderSession(const SceneModel& model, int max_res)
    : model_(model),
      max_res_(max_res),
      cfg_(model.pipeline),
      buffer_(model.pipeline.buffer_len),
      width_(model.camera.width),
      height_(model.camera.height) {}

void RenderSession::apply(const ConfigMessage& msg) {
  if (msg.use_guidance) cfg_.use_guidance = *msg.use_guidance;
  if (msg.use_nn) cfg_.use_neural_renderer = *msg.use_nn;
  if (msg.reset) reset(buffer_);
}

void RenderSession::resize(const ResizeMessage& msg) {
  const int m = std::lcm(4, cfg_.scale);
  if (msg.width < m || msg.height < m || msg.width > max_res_ || msg.height > max_res_)
    throw ProtocolError("resize: size must lie in [" + std::to_string(m) + ", " +
                        std::to_string(max_res_) + "]");
  if (msg.width % m != 0 || msg.height % m != 0)
    throw ProtocolError("resize: sides must be multiples of " + std::to_string(m));
  width_ = msg.width;
  height_ = msg.height;
  reset(buffer_);
}

RenderSession::Output RenderSession::render(const PoseMessage& msg, std::uint64_t pose_seq) {
  CameraIntrinsics intr;
  if (msg.fov_y_deg) {
    intr = CameraIntrinsics::from_fov_y(*msg.fov_y_deg, width_, height_);
  } else if (width_ == model_.camera.width && height_ == model_.camera.height) {
    intr = model_.camera;
  } else {
    const double fov = 2.0 * std::atan(model_.camera.height / (2.0 * model_.camera.fy)) * 180.0 / M_PI;
    intr = CameraIntrinsics::from_fov_y(fov, width_, height_);
  }
  Mat4 c2w = msg.camera_to_world;
  // Re-orthonormalize within the accepted tolerance.
  Eigen::JacobiSVD<Mat3> svd(c2w.topLeftCorner<3, 3>(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  c2w.topLeftCorner<3, 3>() = svd.matrixU() * svd.matrixV().transpose();
  const Pose pose = Pose::from_camera_to_world(c2w);

  Output out;
  const FrameOutput f =
      render_next(model_.field, model_.occupancy, model_.renderer, buffer_, pose, intr, cfg_);
  const std::uint32_t id = next_frame_id_++;
  out.frame = encode_frame(id, f.image);
  out.raw = f.stats;
  out.stats = json{{"type", "stats"},
                   {"frame_id", id},
                   {"fps", f.stats.ms_total > 0.0 ? 1000.0 / f.stats.ms_total : 0.0},
                   {"samples_per_ray", f.stats.samples_per_ray_mean},
                   {"guided_fraction", f.stats.guided_pixel_fraction},
                   {"ms_volume", f.stats.ms_volume},
                   {"ms_warp", f.stats.ms_warp},
                   {"ms_nn", f.stats.ms_neural},
                   {"ms_total", f.stats.ms_total},
                   {"buffer_len", f.stats.buffer_len},
                   {"pose_seq", pose_seq}}
                  .dump();
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

constexpr const char* kPlaceholderPage =
    "<!doctype html><title>trajfield</title><p>Viewer assets not found. Connect a client to "
    "<code>/render</code>.</p>\n";

}  // namespace

struct Server::Impl {
  const SceneModel& model;
  ServerOptions options;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::mutex threads_mu;
  std::vector<std::thread> workers;
  std::atomic<bool> stopping{false};

  Impl(const SceneModel& m, ServerOptions o) : model(m), options(std::move(o)) {}

  void accept();
  std::vector<std::function<void()>> closers;

  void spawn(std::thread t) {
    std::lock_guard lock(threads_mu);
    workers.push_back(std::move(t));
  }
  void add_closer(std::function<void()> f) {
    std::lock_guard lock(threads_mu);
    closers.push_back(std::move(f));
  }
  http::response<http::string_body> static_response(const http::request<http::string_body>& req) const;
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Server::Impl& srv)
      : ws_(std::move(socket)), srv_(srv), session_(srv.model, srv.options.max_res) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->srv_.spawn(std::thread([self] { self->render_loop(); }));
      self->read();
    });
  }

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  struct Outgoing {
    bool binary;
    std::string text;
    std::vector<std::uint8_t> bytes;
  };

  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->shutdown();
        return;
      }
      if (!self->ws_.got_text()) {
        self->buf_.consume(self->buf_.size());
        self->send_text(error_message("binary messages are not accepted"));
      } else {
        const std::string text = beast::buffers_to_string(self->buf_.data());
        self->buf_.consume(self->buf_.size());
        self->handle(text);
      }
      self->read();
    });
  }

  void handle(const std::string& text) {
    ClientMessage msg;
    try {
      msg = parse_client_message(text);
    } catch (const ProtocolError& e) {
      send_text(error_message(e.what()));
      return;
    }
    {
      std::lock_guard lock(mu_);
      if (auto* p = std::get_if<PoseMessage>(&msg)) {
        pending_pose_ = *p;
        pending_seq_ = ++pose_count_;
      } else {
        controls_.push_back(msg);
      }
    }
    cv_.notify_all();
  }

  void render_loop() {
    for (;;) {
      std::vector<ClientMessage> controls;
      std::optional<PoseMessage> pose;
      std::uint64_t seq = 0;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return closed_ || pending_pose_ || !controls_.empty(); });
        if (closed_) return;
        controls.swap(controls_);
        pose.swap(pending_pose_);
        seq = pending_seq_;
      }
      std::vector<std::string> errors;
      for (const ClientMessage& c : controls) {
        try {
          if (auto* cfg = std::get_if<ConfigMessage>(&c)) session_.apply(*cfg);
          if (auto* rs = std::get_if<ResizeMessage>(&c)) session_.resize(*rs);
        } catch (const std::exception& e) {
          errors.push_back(error_message(e.what()));
        }
      }
      std::optional<RenderSession::Output> out;
      if (pose) {
        try {
          out = session_.render(*pose, seq);
        } catch (const std::exception& e) {
          errors.push_back(error_message(std::string("render failed: ") + e.what()));
        }
      }
      net::post(ws_.get_executor(), [self = shared_from_this(), errors = std::move(errors),
                                     out = std::move(out)]() mutable {
        for (auto& e : errors) self->send_text(std::move(e));
        if (out) {
          self->enqueue({true, {}, std::move(out->frame)});
          self->enqueue({false, std::move(out->stats), {}});
        }
      });
    }
  }

  void send_text(std::string text) { enqueue({false, std::move(text), {}}); }

  void enqueue(Outgoing msg) {
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1) write_next();
  }

  void write_next() {
    Outgoing& m = queue_.front();
    ws_.binary(m.binary);
    auto done = [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->queue_.pop_front();
      if (ec) {
        self->queue_.clear();
        self->shutdown();
        return;
      }
      if (!self->queue_.empty()) self->write_next();
    };
    if (m.binary)
      ws_.async_write(net::buffer(m.bytes), std::move(done));
    else
      ws_.async_write(net::buffer(m.text), std::move(done));
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buf_;
  Server::Impl& srv_;
  RenderSession session_;  // touched only by the render thread
  std::deque<Outgoing> queue_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<PoseMessage> pending_pose_;
  std::uint64_t pending_seq_ = 0;
  std::uint64_t pose_count_ = 0;
  std::vector<ClientMessage> controls_;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Server::Impl& srv) : stream_(std::move(socket)), srv_(srv) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_request();
    });
  }

 private:
  void on_request() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/render") {
        stream_.expires_never();
        auto ws = std::make_shared<WsSession>(stream_.release_socket(), srv_);
        srv_.add_closer([weak = std::weak_ptr<WsSession>(ws)] {
          if (auto s = weak.lock()) s->shutdown();
        });
        ws->run(std::move(req_));
        return;
      }
    }
    res_ = srv_.static_response(req_);
    http::async_write(stream_, res_, [self = shared_from_this()](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
  http::response<http::string_body> res_;
  Server::Impl& srv_;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (stopping) return;
    if (!ec) std::make_shared<HttpSession>(std::move(socket), *this)->run();
    accept();
  });
}

http::response<http::string_body> Server::Impl::static_response(
    const http::request<http::string_body>& req) const {
  auto make = [&](http::status status, std::string body, const std::string& type) {
    http::response<http::string_body> res{status, req.version()};
    res.set(http::field::content_type, type);
    res.keep_alive(false);
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
  };
  if (req.method() != http::verb::get) return make(http::status::method_not_allowed, "GET only\n", "text/plain");
  std::string target(req.target());
  if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
  if (target.empty() || target.front() != '/' || target.find("..") != std::string::npos)
    return make(http::status::bad_request, "bad path\n", "text/plain");
  if (target.back() == '/') target += "index.html";
  if (!options.assets_dir.empty()) {
    const std::filesystem::path file = options.assets_dir / target.substr(1);
    std::ifstream in(file, std::ios::binary);
    if (in) {
      std::ostringstream body;
      body << in.rdbuf();
      return make(http::status::ok, body.str(), mime_type(file));
    }
  }
  if (target == "/index.html") return make(http::status::ok, kPlaceholderPage, "text/html");
  return make(http::status::not_found, "not found\n", "text/plain");
}

Server::Server(const SceneModel& model, ServerOptions options)
    : impl_(std::make_unique<Impl>(model, std::move(options))) {
  const tcp::endpoint ep(net::ip::make_address(impl_->options.bind_address), impl_->options.port);
  impl_->acceptor.open(ep.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(ep);
  impl_->acceptor.listen(net::socket_base::max_listen_connections);
}

Server::~Server() {
  stop();
  std::lock_guard lock(impl_->threads_mu);
  for (auto& t : impl_->workers)
    if (t.joinable()) t.join();
}

std::uint16_t Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::run() {
  impl_->accept();
  impl_->ioc.run();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->threads_mu);
    for (auto& close : impl_->closers) close();
    workers.swap(impl_->workers);
  }
  for (auto& t : workers) t.join();
}

void Server::stop() {
  impl_->stopping = true;
  {
    std::lock_guard lock(impl_->threads_mu);
    for (auto& close : impl_->closers) close();
  }
  impl_->ioc.stop();
}

}  // namespace trajfield
