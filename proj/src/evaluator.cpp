#include "kinesplat/evaluator.hpp"

#include "kinesplat/errors.hpp"
#include "kinesplat/image.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include <boost/asio.hpp>

namespace kinesplat {

using nlohmann::json;
namespace fs = std::filesystem;
namespace asio = boost::asio;
using asio::ip::tcp;

namespace {

constexpr std::uint32_t kMaxMessageBytes = 64u << 20;

std::vector<double> row_major_vec(const SimilarityTransform& t) {
  const auto a = t.to_row_major();
  return {a.begin(), a.end()};
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

Vec3 vec3_field(const json& j, const char* key, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j[key].get<std::vector<double>>();
  if (v.size() != 3) throw ParseError(std::string("episode config: '") + key + "' needs 3 values");
  return Vec3(v[0], v[1], v[2]);
}

}  // namespace

std::string_view to_string(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::done: return "done";
    case TerminationReason::step_budget: return "step_budget";
    case TerminationReason::limit_violation: return "limit_violation";
    case TerminationReason::workspace_violation: return "workspace_violation";
    case TerminationReason::client_error: return "client_error";
  }
  return "client_error";
}

namespace {

std::optional<TerminationReason> reason_from_string(std::string_view s) {
  for (auto r : {TerminationReason::done, TerminationReason::step_budget,
                 TerminationReason::limit_violation, TerminationReason::workspace_violation,
                 TerminationReason::client_error}) {
    if (to_string(r) == s) return r;
  }
  return std::nullopt;
}

}  // namespace

EpisodeConfig load_episode_config(const fs::path& path) {
  const fs::path base_dir = fs::absolute(path).parent_path();
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("episode config: ") + e.what());
  }
  EpisodeConfig config;
  try {
    std::vector<std::string> missing;
    auto need = [&](const char* key) {
      const fs::path p = resolve(base_dir, j.at(key).get<std::string>());
      if (!fs::is_regular_file(p)) missing.push_back(p.string());
      return p;
    };
    const fs::path scene = need("scene");
    const fs::path chain = need("chain");
    const fs::path labels = need("labels");
    std::optional<fs::path> camera_file;
    if (j.contains("camera_file")) camera_file = need("camera_file");
    std::map<std::string, std::pair<fs::path, ObjectAnchor>> objects;
    const json object_specs = j.value("objects", json::object());
    for (const auto& [id, obj] : object_specs.items()) {
      const fs::path p = resolve(base_dir, obj.at("scene").get<std::string>());
      if (!fs::is_regular_file(p)) missing.push_back(p.string());
      objects[id] = {p, ObjectAnchor{vec3_field(obj, "anchor", Vec3::Zero())}};
      if (obj.contains("pose")) {
        config.object_poses[id] =
            SimilarityTransform::from_row_major(obj["pose"].get<std::vector<double>>());
      }
    }
    if (!missing.empty()) {
      std::string msg = "episode config references missing files:";
      for (const auto& m : missing) msg += " " + m;
      throw JobError(msg);
    }

    FrameComposer& c = config.composer;
    c.chain = load_chain_file(chain);
    c.base = bind_labels(load_splat_file(scene), load_label_file(labels), c.chain);
    c.canonical = j.contains("canonical") ? JointState{j["canonical"].get<std::vector<double>>()}
                                          : JointState::zeros(c.chain.joint_count());
    for (const auto& [id, src] : objects) c.objects[id] = {load_splat_file(src.first), src.second};
    if (j.contains("gs_from_sim")) {
      c.gs_from_sim = SimilarityTransform::from_row_major(j["gs_from_sim"].get<std::vector<double>>());
    }
    config.camera = camera_file ? load_camera_file(*camera_file) : camera_from_json_text(j.at("camera").dump());
    config.initial = j.contains("initial") ? JointState{j["initial"].get<std::vector<double>>()}
                                           : JointState::zeros(c.chain.joint_count());
    if (config.initial.size() != c.chain.joint_count() || c.canonical.size() != c.chain.joint_count()) {
      throw JobError("episode joint vectors do not match the chain length");
    }
    config.step_budget = j.value("step_budget", 100);
    if (config.step_budget < 1) throw JobError("step_budget must be at least 1");
    if (j.contains("workspace")) {
      const json& w = j["workspace"];
      config.workspace.min = vec3_field(w, "min", config.workspace.min);
      config.workspace.max = vec3_field(w, "max", config.workspace.max);
      config.workspace.table_z = w.value("table_z", config.workspace.table_z);
    }
    if (j.contains("background")) {
      const auto bg = j["background"].get<std::vector<float>>();
      if (bg.size() != 3) throw ParseError("episode config: background needs 3 values");
      config.render_options.background = Eigen::Vector3f(bg[0], bg[1], bg[2]);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("episode config: ") + e.what());
  }
  return config;
}

Episode::Episode(const EpisodeConfig& config) : config_(config) {
  state_.joints = config.initial;
  state_.object_poses = config.object_poses;
}

Observation Episode::observe() const {
  const GaussianScene scene = config_.composer.compose(state_.joints, state_.object_poses);
  return {state_.step, state_.joints, state_.object_poses,
          render(scene, config_.camera, config_.render_options).rgb};
}

std::optional<Observation> Episode::step(const ActionMessage& action) {
  if (state_.terminated) return std::nullopt;
  if (action.done) {
    state_.terminated = TerminationReason::done;
    return std::nullopt;
  }
  const MdhChain& chain = config_.composer.chain;
  if (action.joints.size() != chain.joint_count()) {
    state_.terminated = TerminationReason::client_error;
    return std::nullopt;
  }
  JointState next = state_.joints;
  for (std::size_t i = 0; i < next.size(); ++i) {
    next.angles[i] = action.mode == ActionMode::delta ? next.angles[i] + action.joints[i]
                                                      : action.joints[i];
  }
  if (!check_limits(chain, next).empty()) {
    state_.terminated = TerminationReason::limit_violation;
    return std::nullopt;
  }
  const Workspace& ws = config_.workspace;
  for (const auto& frame : forward_kinematics(chain, next)) {
    const Vec3 p = frame.translation();
    const bool inside = (p.array() >= ws.min.array()).all() && (p.array() <= ws.max.array()).all();
    if (!inside || p.z() < ws.table_z) {
      state_.terminated = TerminationReason::workspace_violation;
      return std::nullopt;
    }
  }
  state_.joints = std::move(next);
  ++state_.step;
  if (state_.step >= config_.step_budget) {
    state_.terminated = TerminationReason::step_budget;
    return std::nullopt;
  }
  return observe();
}

void Episode::abort_client_error() {
  if (!state_.terminated) state_.terminated = TerminationReason::client_error;
}

std::string frame_message(const json& message) {
  const std::string payload = message.dump();
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(4, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xFF);
  out[1] = static_cast<char>((n >> 16) & 0xFF);
  out[2] = static_cast<char>((n >> 8) & 0xFF);
  out[3] = static_cast<char>(n & 0xFF);
  return out + payload;
}

json observation_message(const Observation& obs) {
  json poses = json::object();
  for (const auto& [id, pose] : obs.object_poses) poses[id] = row_major_vec(pose);
  return {{"type", "obs"},
          {"step", obs.step},
          {"joint_state", obs.joints.angles},
          {"object_poses", poses},
          {"image", base64_encode(encode_png(obs.rgb))},
          {"width", obs.rgb.width},
          {"height", obs.rgb.height}};
}

json end_message(TerminationReason reason, int steps, const std::string& error) {
  json j = {{"type", "end"}, {"reason", std::string(to_string(reason))}, {"steps", steps}};
  if (!error.empty()) j["error"] = error;
  return j;
}

ActionMessage parse_action(const json& message, std::size_t joint_count) {
  if (!message.is_object()) throw ProtocolError("message is not a JSON object");
  if (message.value("type", std::string()) != "act") throw ProtocolError("expected message type 'act'");
  ActionMessage action;
  const std::string mode = message.value("mode", std::string("delta"));
  if (mode == "delta") action.mode = ActionMode::delta;
  else if (mode == "absolute") action.mode = ActionMode::absolute;
  else throw ProtocolError("unknown action mode '" + mode + "'");
  if (message.contains("done")) {
    if (!message["done"].is_boolean()) throw ProtocolError("'done' must be a boolean");
    action.done = message["done"].get<bool>();
  }
  if (!message.contains("joints") || !message["joints"].is_array()) {
    if (action.done) return action;
    throw ProtocolError("'joints' must be an array");
  }
  for (const auto& v : message["joints"]) {
    if (!v.is_number()) throw ProtocolError("'joints' must contain numbers");
    action.joints.push_back(v.get<double>());
    if (!std::isfinite(action.joints.back())) throw ProtocolError("non-finite joint value");
  }
  if (action.joints.size() != joint_count && !action.done) {
    throw ProtocolError("'joints' has " + std::to_string(action.joints.size()) + " values, expected " +
                        std::to_string(joint_count));
  }
  return action;
}

namespace {

void write_frame(tcp::socket& socket, const json& message) {
  const std::string bytes = frame_message(message);
  asio::write(socket, asio::buffer(bytes));
}

void write_raw_frame(tcp::socket& socket, std::string_view payload) {
  const auto n = static_cast<std::uint32_t>(payload.size());
  const unsigned char header[4] = {static_cast<unsigned char>(n >> 24), static_cast<unsigned char>(n >> 16),
                                   static_cast<unsigned char>(n >> 8), static_cast<unsigned char>(n)};
  std::array<asio::const_buffer, 2> bufs{asio::buffer(header, 4), asio::buffer(payload.data(), payload.size())};
  asio::write(socket, bufs);
}

// Returns nullopt on orderly disconnect.
std::optional<std::string> read_frame(tcp::socket& socket) {
  unsigned char header[4];
  boost::system::error_code ec;
  asio::read(socket, asio::buffer(header, 4), ec);
  if (ec) return std::nullopt;
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxMessageBytes) throw ProtocolError("message length " + std::to_string(n) + " exceeds limit");
  std::string payload(n, '\0');
  asio::read(socket, asio::buffer(payload.data(), n), ec);
  if (ec) return std::nullopt;
  return payload;
}

class TranscriptWriter {
 public:
  explicit TranscriptWriter(const fs::path& path)
      : out_(path, std::ios::trunc), start_(std::chrono::steady_clock::now()) {
    if (!out_) throw IoError("cannot open transcript '" + path.string() + "'");
  }
  void record(const char* direction, const json& message) {
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    out_ << json{{"t", t}, {"dir", direction}, {"msg", message}}.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

struct EvaluatorServer::Impl {
  EpisodeConfig config;
  ServerOptions options;
  asio::io_context io;
  std::optional<tcp::acceptor> acceptor;
  std::atomic<bool> stopping{false};
  std::uint16_t port = 0;
  mutable std::mutex mutex;
  std::vector<fs::path> transcripts;

  void run_session(tcp::socket socket, int session);
};

void EvaluatorServer::Impl::run_session(tcp::socket socket, int session) {
  char name[64];
  std::snprintf(name, sizeof name, "episode_%04d.jsonl", session);
  const fs::path path = options.transcript_dir / name;
  TranscriptWriter transcript(path);
  {
    std::lock_guard lock(mutex);
    transcripts.push_back(path);
  }

  Episode episode(config);
  auto send = [&](const json& msg) {
    transcript.record("s2c", msg);
    write_frame(socket, msg);
  };
  try {
    send(observation_message(episode.observe()));
    while (true) {
      std::optional<std::string> payload;
      try {
        payload = read_frame(socket);
      } catch (const ProtocolError& e) {
        episode.abort_client_error();
        send(end_message(TerminationReason::client_error, episode.state().step, e.what()));
        return;
      }
      if (!payload) {
        episode.abort_client_error();
        transcript.record("s2c", end_message(TerminationReason::client_error, episode.state().step,
                                             "client disconnected"));
        return;
      }
      json message = json::parse(*payload, nullptr, false);
      transcript.record("c2s", message.is_discarded() ? json{{"raw", *payload}} : message);
      ActionMessage action;
      try {
        if (message.is_discarded()) throw ProtocolError("message is not valid JSON");
        action = parse_action(message, config.composer.chain.joint_count());
      } catch (const ProtocolError& e) {
        episode.abort_client_error();
        send(end_message(TerminationReason::client_error, episode.state().step, e.what()));
        return;
      }
      if (auto obs = episode.step(action)) {
        send(observation_message(*obs));
      } else {
        send(end_message(*episode.state().terminated, episode.state().step));
        return;
      }
    }
  } catch (const boost::system::system_error&) {
    episode.abort_client_error();
    transcript.record("s2c", end_message(TerminationReason::client_error, episode.state().step,
                                         "connection lost"));
  }
}

EvaluatorServer::EvaluatorServer(EpisodeConfig config, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
  impl_->config = std::move(config);
  impl_->options = std::move(options);
  if (impl_->options.transcript_dir.empty()) impl_->options.transcript_dir = fs::current_path();
}

EvaluatorServer::~EvaluatorServer() = default;

std::uint16_t EvaluatorServer::bind() {
  fs::create_directories(impl_->options.transcript_dir);
  const tcp::endpoint endpoint(asio::ip::make_address(impl_->options.address), impl_->options.port);
  impl_->acceptor.emplace(impl_->io, endpoint);
  impl_->port = impl_->acceptor->local_endpoint().port();
  return impl_->port;
}

void EvaluatorServer::run() {
  if (!impl_->acceptor) bind();
  for (int session = 0; impl_->options.max_sessions == 0 || session < impl_->options.max_sessions;
       ++session) {
    tcp::socket socket(impl_->io);
    boost::system::error_code ec;
    impl_->acceptor->accept(socket, ec);
    if (impl_->stopping) break;
    if (ec) continue;
    impl_->run_session(std::move(socket), session);
  }
}

void EvaluatorServer::stop() {
  if (impl_->stopping.exchange(true)) return;
  // Wake a blocking accept with a throwaway connection.
  try {
    asio::io_context io;
    tcp::socket s(io);
    s.connect(tcp::endpoint(asio::ip::make_address(impl_->options.address), impl_->port));
  } catch (const std::exception&) {
  }
}

std::vector<fs::path> EvaluatorServer::transcripts() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->transcripts;
}

struct EvaluatorClient::Impl {
  asio::io_context io;
  tcp::socket socket{io};
};

EvaluatorClient::EvaluatorClient(const std::string& address, std::uint16_t port)
    : impl_(std::make_unique<Impl>()) {
  impl_->socket.connect(tcp::endpoint(asio::ip::make_address(address), port));
}

EvaluatorClient::~EvaluatorClient() = default;

json EvaluatorClient::receive() {
  auto payload = read_frame(impl_->socket);
  if (!payload) throw ProtocolError("server closed the connection");
  return json::parse(*payload);
}

void EvaluatorClient::send(const json& message) { write_frame(impl_->socket, message); }

void EvaluatorClient::send_raw(std::string_view payload) { write_raw_frame(impl_->socket, payload); }

std::vector<TranscriptEntry> load_transcript(const fs::path& path) {
  std::istringstream in(read_file_bytes(path));
  std::vector<TranscriptEntry> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("t").get<double>(), j.at("dir").get<std::string>(), j.at("msg")});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ReplayCheck replay_transcript(const EpisodeConfig& config, const std::vector<TranscriptEntry>& transcript) {
  std::vector<json> observations, actions;
  std::optional<TerminationReason> recorded_end;
  for (const auto& e : transcript) {
    if (e.direction == "c2s") {
      actions.push_back(e.message);
    } else if (e.message.value("type", std::string()) == "obs") {
      observations.push_back(e.message);
    } else if (e.message.value("type", std::string()) == "end") {
      recorded_end = reason_from_string(e.message.value("reason", std::string()));
    }
  }

  ReplayCheck check;
  Episode episode(config);
  auto compare = [&](const JointState& state, std::size_t index) {
    if (index >= observations.size()) {
      check.first_mismatch = "replay produced more observations than recorded";
      return false;
    }
    const auto recorded = observations[index]["joint_state"].get<std::vector<double>>();
    ++check.compared_states;
    if (recorded != state.angles) {
      check.first_mismatch = "joint state differs at observation " + std::to_string(index);
      return false;
    }
    return true;
  };

  std::size_t index = 0;
  if (!compare(episode.state().joints, index++)) return check;
  for (const auto& msg : actions) {
    std::optional<Observation> obs;
    try {
      obs = episode.step(parse_action(msg, config.composer.chain.joint_count()));
    } catch (const ProtocolError&) {
      episode.abort_client_error();
    }
    if (!obs) break;
    if (!compare(obs->joints, index++)) return check;
  }
  check.final_reason = episode.state().terminated;
  if (index != observations.size()) {
    check.first_mismatch = "replay produced fewer observations than recorded";
    return check;
  }
  if (check.final_reason != recorded_end) {
    check.first_mismatch = "termination reason differs";
    return check;
  }
  check.states_match = true;
  return check;
}

}  // namespace kinesplat
