#pragma once

#include "kinesplat/kinematics.hpp"
#include "kinesplat/rasterizer.hpp"
#include "kinesplat/synthesizer.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace kinesplat {

enum class TerminationReason { done, step_budget, limit_violation, workspace_violation, client_error };

std::string_view to_string(TerminationReason reason);

enum class ActionMode { absolute, delta };

struct ActionMessage {
  ActionMode mode = ActionMode::delta;
  std::vector<double> joints;
  bool done = false;
};

/// Axis-aligned box every FK frame origin must stay inside, plus a table
/// plane the origins may not go below.
struct Workspace {
  Vec3 min = Vec3::Constant(-1e9);
  Vec3 max = Vec3::Constant(1e9);
  double table_z = -1e9;
};

struct EpisodeConfig {
  FrameComposer composer;
  CameraModel camera;
  JointState initial;
  std::map<std::string, SimilarityTransform> object_poses;  // sim frame, static
  int step_budget = 100;
  Workspace workspace;
  RenderOptions render_options;
};

/// Loads the evaluator config (JSON): scene/chain/labels/camera paths,
/// initial joints, budget, workspace, optional objects.
EpisodeConfig load_episode_config(const std::filesystem::path& path);

struct EpisodeState {
  int step = 0;
  JointState joints;
  std::map<std::string, SimilarityTransform> object_poses;
  std::optional<TerminationReason> terminated;
};

struct Observation {
  int step = 0;
  JointState joints;
  std::map<std::string, SimilarityTransform> object_poses;
  Image rgb;
};

/// One closed-loop episode, independent of any transport.
class Episode {
 public:
  explicit Episode(const EpisodeConfig& config);

  const EpisodeState& state() const { return state_; }
  Observation observe() const;

  /// Applies one action. Returns the next observation, or nullopt once the
  /// episode has terminated (state().terminated says why). Violations
  /// leave the joint state untouched.
  std::optional<Observation> step(const ActionMessage& action);

  /// Marks the episode terminated with client_error.
  void abort_client_error();

 private:
  const EpisodeConfig& config_;
  EpisodeState state_;
};

// Wire format: 4-byte big-endian length prefix followed by UTF-8 JSON.
std::string frame_message(const nlohmann::json& message);
nlohmann::json observation_message(const Observation& obs);
nlohmann::json end_message(TerminationReason reason, int steps, const std::string& error = {});
/// Throws ProtocolError on anything that is not a well-formed "act".
ActionMessage parse_action(const nlohmann::json& message, std::size_t joint_count);

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 0;  // 0 picks an ephemeral port
  int max_sessions = 0;    // 0 = serve until stopped
  std::filesystem::path transcript_dir;
};

/// Sequential one-episode-per-connection server.
class EvaluatorServer {
 public:
  EvaluatorServer(EpisodeConfig config, ServerOptions options);
  ~EvaluatorServer();

  EvaluatorServer(const EvaluatorServer&) = delete;
  EvaluatorServer& operator=(const EvaluatorServer&) = delete;

  /// Binds the listening socket; returns the bound port.
  std::uint16_t bind();
  /// Blocks serving sessions until max_sessions is reached or stop() is called.
  void run();
  void stop();

  /// Transcript paths written so far, in session order.
  std::vector<std::filesystem::path> transcripts() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocking client used by tests and scripted policies.
class EvaluatorClient {
 public:
  EvaluatorClient(const std::string& address, std::uint16_t port);
  ~EvaluatorClient();

  nlohmann::json receive();
  void send(const nlohmann::json& message);
  /// Sends raw bytes inside a length-prefixed frame (for malformed-input tests).
  void send_raw(std::string_view payload);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct TranscriptEntry {
  double time = 0.0;
  std::string direction;  // "s2c" or "c2s"
  nlohmann::json message;
};

std::vector<TranscriptEntry> load_transcript(const std::filesystem::path& path);

struct ReplayCheck {
  bool states_match = false;
  std::size_t compared_states = 0;
  std::optional<TerminationReason> final_reason;
  std::string first_mismatch;
};

/// Feeds the recorded client actions into a fresh episode and compares every
/// observed joint state and the termination reason bit-exactly.
ReplayCheck replay_transcript(const EpisodeConfig& config,
                              const std::vector<TranscriptEntry>& transcript);

}  // namespace kinesplat
