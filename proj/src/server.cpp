#include "swarmstage/server.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "swarmstage/error.hpp"
#include "swarmstage/simulation.hpp"

namespace swarmstage {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

ClientRequest parse_client_message(const std::string& text, const std::vector<std::string>& programs,
                                   const std::vector<std::string>& swarms, bool has_marker) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error&) {
    throw Error(Errc::InvalidInput, "message is not valid JSON");
  }
  if (!doc.is_object()) throw Error(Errc::InvalidInput, "message must be an object");
  if (doc.contains("v") && doc.at("v") != kSocketApiVersion) {
    throw Error(Errc::InvalidInput, "unsupported API version (server speaks v1)");
  }
  if (!doc.contains("type") || !doc.at("type").is_string()) throw Error(Errc::InvalidInput, "missing \"type\"");
  const std::string type = doc.at("type").get<std::string>();

  ClientRequest req;
  if (type == "pause") {
    req.kind = ClientRequest::Kind::Pause;
  } else if (type == "resume") {
    req.kind = ClientRequest::Kind::Resume;
  } else if (type == "set_seed") {
    if (!doc.contains("seed") || !doc.at("seed").is_number_unsigned()) {
      throw Error(Errc::InvalidInput, "set_seed needs a non-negative integer \"seed\"");
    }
    req.kind = ClientRequest::Kind::SetSeed;
    req.seed = doc.at("seed").get<std::uint64_t>();
  } else if (type == "command") {
    req.kind = ClientRequest::Kind::Command;
    const std::string cmd = doc.value("command", "");
    if (cmd == "launch") {
      req.cue.command = CueCommand::Launch;
      req.cue.swarm = doc.value("swarm", "");
      if (!req.cue.swarm.empty() && std::find(swarms.begin(), swarms.end(), req.cue.swarm) == swarms.end()) {
        throw Error(Errc::InvalidInput, "unknown swarm '" + req.cue.swarm + "'");
      }
    } else if (cmd == "switch") {
      req.cue.command = CueCommand::Switch;
      req.cue.program = doc.value("program", "");
      if (std::find(programs.begin(), programs.end(), req.cue.program) == programs.end()) {
        throw Error(Errc::InvalidInput, "unknown program '" + req.cue.program + "'");
      }
    } else if (cmd == "stop") {
      req.cue.command = CueCommand::Stop;
    } else {
      throw Error(Errc::InvalidInput, "command must be launch, switch or stop");
    }
  } else if (type == "marker") {
    if (!has_marker) throw Error(Errc::InvalidInput, "this performance has no marker node");
    if (!doc.contains("x") || !doc.at("x").is_number() || !doc.contains("y") || !doc.at("y").is_number()) {
      throw Error(Errc::InvalidInput, "marker needs numeric \"x\" and \"y\"");
    }
    req.kind = ClientRequest::Kind::Marker;
    req.cue.command = CueCommand::Marker;
    req.cue.x = doc.at("x").get<double>();
    req.cue.y = doc.at("y").get<double>();
    const std::string mode = doc.value("mode", "attractor");
    if (mode == "attractor") req.cue.marker_mode = MarkerMode::Attractor;
    else if (mode == "repulsor") req.cue.marker_mode = MarkerMode::Repulsor;
    else throw Error(Errc::InvalidInput, "marker mode must be attractor or repulsor");
  } else {
    throw Error(Errc::InvalidInput, "unknown message type '" + type + "'");
  }
  return req;
}

namespace {

std::string error_reply(const std::string& message, const std::string& request) {
  return json{{"type", "error"}, {"v", kSocketApiVersion}, {"message", message}, {"request", request}}.dump();
}

class Session : public std::enable_shared_from_this<Session> {
 public:
  using Handler = std::function<void(const std::shared_ptr<Session>&, std::string)>;

  Session(tcp::socket socket, Handler on_message, std::function<void(Session*)> on_close)
      : ws_(std::move(socket)), on_message_(std::move(on_message)), on_close_(std::move(on_close)) {}

  void start(std::string hello) {
    ws_.async_accept([self = shared_from_this(), hello = std::move(hello)](beast::error_code ec) mutable {
      if (ec) return self->close();
      self->accepted_ = true;
      self->send(std::make_shared<const std::string>(std::move(hello)));
      self->read();
    });
  }

  // Only called on the I/O thread.
  void shutdown() {
    closed_ = true;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).close(ec);
  }

  // Only called on the I/O thread.
  void send(std::shared_ptr<const std::string> msg) {
    if (!accepted_ || closed_) return;
    // A client that cannot keep up only gets the latest snapshots.
    if (queue_.size() > 64) queue_.pop_front();
    queue_.push_back(std::move(msg));
    if (queue_.size() == 1 && !writing_) write();
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->on_message_(self, std::move(text));
      self->read();
    });
  }

  void write() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) return self->close();
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    on_close_(this);
  }

  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool accepted_ = false;
  bool writing_ = false;
  bool closed_ = false;
  Handler on_message_;
  std::function<void(Session*)> on_close_;
};

}  // namespace

struct LiveServer::Impl {
  PerformanceScript script;
  ServeOptions options;
  std::vector<std::string> program_names;
  std::vector<std::string> swarm_names;

  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::set<std::shared_ptr<Session>> sessions;  // I/O thread only
  std::uint16_t bound_port = 0;

  struct Inbound {
    ClientRequest request;
    std::weak_ptr<Session> from;
  };
  std::mutex inbound_mutex;
  std::deque<Inbound> inbound;

  std::atomic<bool> stopping{false};
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  std::thread io_thread;
  std::thread sim_thread;

  std::string hello() const {
    json swarms = json::array();
    for (const auto& s : script.swarms) {
      swarms.push_back({{"name", s.name}, {"class", std::string(to_string(s.cls.kind))}, {"count", s.count}});
    }
    return json{{"type", "hello"},
                {"v", kSocketApiVersion},
                {"venue", {{"width", script.venue.width}, {"depth", script.venue.depth}}},
                {"swarms", swarms},
                {"programs", program_names},
                {"paused", true}}
        .dump();
  }

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto session = std::make_shared<Session>(
          std::move(socket),
          [this](const std::shared_ptr<Session>& s, std::string text) { on_message(s, text); },
          [this](Session* s) {
            std::erase_if(sessions, [s](const auto& p) { return p.get() == s; });
          });
      sessions.insert(session);
      session->start(hello());
      accept();
    });
  }

  void on_message(const std::shared_ptr<Session>& from, const std::string& text) {
    try {
      ClientRequest req = parse_client_message(text, program_names, swarm_names, script.marker.has_value());
      std::lock_guard lock(inbound_mutex);
      inbound.push_back({std::move(req), from});
    } catch (const Error& e) {
      std::string type;
      try {
        type = json::parse(text).value("type", "");
      } catch (...) {
      }
      from->send(std::make_shared<const std::string>(error_reply(e.what(), type)));
    }
  }

  void post_to(std::weak_ptr<Session> target, std::string msg) {
    asio::post(ioc, [target = std::move(target), msg = std::make_shared<const std::string>(std::move(msg))] {
      if (auto s = target.lock()) s->send(msg);
    });
  }

  void broadcast(std::string msg) {
    asio::post(ioc, [this, msg = std::make_shared<const std::string>(std::move(msg))] {
      for (const auto& s : sessions) s->send(msg);
    });
  }

  void sim_loop() {
    auto sim = std::make_unique<Simulation>(script);
    bool paused = true;
    std::size_t event_cursor = 0;
    const auto tick = std::chrono::duration<double>(kSimDt / std::max(options.speed, 1e-3));
    auto next = std::chrono::steady_clock::now();

    while (!stopping) {
      std::deque<Inbound> batch;
      {
        std::lock_guard lock(inbound_mutex);
        batch.swap(inbound);
      }
      for (auto& in : batch) {
        try {
          switch (in.request.kind) {
            case ClientRequest::Kind::Pause: paused = true; break;
            case ClientRequest::Kind::Resume: paused = false; break;
            case ClientRequest::Kind::SetSeed: {
              PerformanceScript s = script;
              s.seed = in.request.seed;
              s.net.seed = in.request.seed;
              sim = std::make_unique<Simulation>(std::move(s));
              event_cursor = 0;
              paused = true;
              break;
            }
            case ClientRequest::Kind::Command:
            case ClientRequest::Kind::Marker:
              sim->apply_cue(in.request.cue);
              break;
          }
        } catch (const Error& e) {
          post_to(in.from, error_reply(e.what(), "command"));
        }
      }
      if (!paused) sim->step();

      json snap = sim->snapshot(event_cursor);
      event_cursor = sim->events().size();
      snap["paused"] = paused;
      broadcast(snap.dump());

      next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(tick);
      const auto now = std::chrono::steady_clock::now();
      if (next < now) next = now;  // do not try to catch up after a stall
      std::unique_lock lock(stop_mutex);
      stop_cv.wait_until(lock, next, [this] { return stopping.load(); });
    }
  }
};

LiveServer::LiveServer(PerformanceScript script, ServeOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->script = std::move(script);
  impl_->options = options;
  Simulation probe(impl_->script);  // validates and resolves the program table
  for (const auto& p : probe.programs()) impl_->program_names.push_back(p.name);
  for (const auto& s : impl_->script.swarms) impl_->swarm_names.push_back(s.name);
}

LiveServer::~LiveServer() { stop(); }

std::uint16_t LiveServer::start() {
  Impl& im = *impl_;
  try {
    const tcp::endpoint ep(asio::ip::make_address(im.options.address), im.options.port);
    im.acceptor.open(ep.protocol());
    im.acceptor.set_option(asio::socket_base::reuse_address(true));
    im.acceptor.bind(ep);
    im.acceptor.listen();
  } catch (const boost::system::system_error& e) {
    throw Error(Errc::Io, "cannot listen on " + im.options.address + ":" + std::to_string(im.options.port) + ": " +
                              e.code().message());
  }
  im.bound_port = im.acceptor.local_endpoint().port();
  im.accept();
  im.io_thread = std::thread([&im] {
    auto guard = asio::make_work_guard(im.ioc);
    im.ioc.run();
  });
  im.sim_thread = std::thread([&im] { im.sim_loop(); });
  spdlog::info("serving on ws://{}:{}", im.options.address, im.bound_port);
  return im.bound_port;
}

void LiveServer::stop() {
  Impl& im = *impl_;
  {
    std::lock_guard lock(im.stop_mutex);
    im.stopping = true;
  }
  im.stop_cv.notify_all();
  if (im.sim_thread.joinable()) im.sim_thread.join();
  asio::post(im.ioc, [&im] {
    beast::error_code ec;
    im.acceptor.close(ec);
    for (const auto& s : im.sessions) s->shutdown();
    im.sessions.clear();
    im.ioc.stop();
  });
  if (im.io_thread.joinable()) im.io_thread.join();
}

void LiveServer::wait() {
  Impl& im = *impl_;
  std::unique_lock lock(im.stop_mutex);
  im.stop_cv.wait(lock, [&im] { return im.stopping.load(); });
}

std::uint16_t LiveServer::port() const noexcept { return impl_->bound_port; }

}  // namespace swarmstage
