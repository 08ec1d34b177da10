#pragma once

// Live teleoperation sessions: one Euler step per action frame.
//
// Client -> server frames
//   {"type":"action","a":[...]}   {"type":"reset"}   {"type":"select_model","name":"..."}
// Server -> client frames
//   {"type":"hello","session":..,"models":[..],"model":..,"nu":..,"action_space":{n,c,max_norm},"joint_limits":{lower,upper}}
//   {"type":"state","x":[..],"ee":[x,y],"links":[[x,y],..],"dist_origin":..,"step":..,"model":..}
//   {"type":"error","message":".."}

#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "revmap/arm.hpp"
#include "revmap/checkpoint.hpp"
#include "revmap/reversibility.hpp"

namespace revmap {

struct LoadedModel {
  std::string name;
  Model model;
  bool deploy = true;  // Gram-Schmidt for hyper-linear decoders

  const ActionSpace& space() const { return model.arch.action_space; }
  DecoderField field() const { return DecoderField(model.decoder, deploy); }
};

// Shared read-only after construction.
class ModelStore {
 public:
  explicit ModelStore(ArmModel arm) : arm_(std::move(arm)) { arm_.validate(); }

  // Refuses models whose state dimension differs from the arm.
  void add(std::string name, Model model, bool deploy = true) {
    if (model.arch.state_dim != arm_.dof())
      throw InputError("model '" + name + "' has state_dim " + std::to_string(model.arch.state_dim) + ", arm has " +
                       std::to_string(arm_.dof()) + " joints");
    if (models_.count(name)) throw InputError("duplicate model name '" + name + "'");
    order_.push_back(name);
    auto m = std::make_shared<LoadedModel>(LoadedModel{name, std::move(model), deploy});
    models_.emplace(std::move(name), std::move(m));
  }

  std::shared_ptr<const LoadedModel> find(const std::string& name) const {
    auto it = models_.find(name);
    return it == models_.end() ? nullptr : it->second;
  }
  const std::vector<std::string>& names() const { return order_; }
  const ArmModel& arm() const { return arm_; }
  bool empty() const { return order_.empty(); }

 private:
  ArmModel arm_;
  std::vector<std::string> order_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> models_;
};

// Joint-limit-clamped Euler step; the only state update used by sessions
// and their replay.
template <VectorField F>
Vec session_step(const F& f, const ArmModel& arm, const Vec& x, const Vec& a, double nu) {
  return arm.clamp(euler_step(f, x, a, nu));
}

struct SessionEvent {
  enum class Kind { action, reset, select } kind = Kind::action;
  std::string model;
  Vec action;  // applied (clamped) action
  Vec state;   // state after the event
};

inline nlohmann::json to_json_array(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec vec_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InputError("expected a numeric array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw InputError("expected a numeric array");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline nlohmann::json event_to_json(const SessionEvent& e) {
  static const char* kinds[] = {"action", "reset", "select_model"};
  nlohmann::json j{{"event", kinds[static_cast<int>(e.kind)]}, {"model", e.model}, {"x", to_json_array(e.state)}};
  if (e.kind == SessionEvent::Kind::action) j["a"] = to_json_array(e.action);
  return j;
}

inline SessionEvent event_from_json(const nlohmann::json& j) {
  SessionEvent e;
  const auto kind = j.at("event").get<std::string>();
  if (kind == "action") {
    e.kind = SessionEvent::Kind::action;
    e.action = vec_from_json(j.at("a"));
  } else if (kind == "reset") {
    e.kind = SessionEvent::Kind::reset;
  } else if (kind == "select_model") {
    e.kind = SessionEvent::Kind::select;
  } else {
    throw InputError("session log: unknown event '" + kind + "'");
  }
  e.model = j.at("model").get<std::string>();
  e.state = vec_from_json(j.at("x"));
  return e;
}

struct SessionConfig {
  double nu = 1.0;
  std::optional<Vec> initial;  // arm home when unset
};

class Session {
 public:
  Session(std::shared_ptr<const ModelStore> store, std::string id, const SessionConfig& cfg,
          const std::string& model = {})
      : store_(std::move(store)), id_(std::move(id)), nu_(cfg.nu) {
    if (!store_ || store_->empty()) throw InputError("session: no models loaded");
    if (!(nu_ > 0.0)) throw InputError("session: step size must be > 0");
    const ArmModel& arm = store_->arm();
    origin_ = cfg.initial.value_or(arm.home);
    if (origin_.size() != arm.dof()) throw InputError("session: initial state dimension mismatch");
    if (!arm.within_limits(origin_)) throw InputError("session: initial state violates joint limits");
    model_ = store_->find(model.empty() ? store_->names().front() : model);
    if (!model_) throw InputError("session: unknown model '" + model + "'");
    x_ = origin_;
  }

  const std::string& id() const { return id_; }
  const Vec& state() const { return x_; }
  const Vec& origin() const { return origin_; }
  long step() const { return step_; }
  double nu() const { return nu_; }
  const LoadedModel& model() const { return *model_; }
  const std::vector<SessionEvent>& log() const { return log_; }

  nlohmann::json hello() const {
    const ArmModel& arm = store_->arm();
    const ActionSpace& s = model_->space();
    return {{"type", "hello"},
            {"session", id_},
            {"models", store_->names()},
            {"model", model_->name},
            {"nu", nu_},
            {"action_space", {{"n", s.n}, {"c", s.c}, {"max_norm", s.max_norm}}},
            {"joint_limits", {{"lower", to_json_array(arm.lower)}, {"upper", to_json_array(arm.upper)}}}};
  }

  nlohmann::json state_frame() const {
    const Pose pose = forward_kinematics(store_->arm(), x_);
    nlohmann::json links = nlohmann::json::array();
    for (const Point& p : pose.joints) links.push_back({p.x(), p.y()});
    return {{"type", "state"},
            {"x", to_json_array(x_)},
            {"ee", {pose.end_effector.x(), pose.end_effector.y()}},
            {"links", std::move(links)},
            {"dist_origin", (x_ - origin_).norm()},
            {"step", step_},
            {"model", model_->name}};
  }

  static nlohmann::json error_frame(const std::string& message) { return {{"type", "error"}, {"message", message}}; }

  void apply_action(const Vec& raw) {
    const ActionSpace& s = model_->space();
    if (raw.size() != s.n)
      throw InputError("action has " + std::to_string(raw.size()) + " components, expected " + std::to_string(s.n));
    if (!raw.allFinite()) throw InputError("action must be finite");
    const Vec a = clamp_action(s, raw);
    Vec next = session_step(model_->field(), store_->arm(), x_, a, nu_);
    if (!next.allFinite()) throw IntegrationError("session: nonfinite state", step_);
    x_ = std::move(next);
    ++step_;
    log_.push_back({SessionEvent::Kind::action, model_->name, a, x_});
  }

  void reset() {
    x_ = origin_;
    step_ = 0;
    log_.push_back({SessionEvent::Kind::reset, model_->name, Vec(), x_});
  }

  void select_model(const std::string& name) {
    auto m = store_->find(name);
    if (!m) throw InputError("unknown model '" + name + "'");
    model_ = std::move(m);
    log_.push_back({SessionEvent::Kind::select, model_->name, Vec(), x_});
  }

  // One inbound text frame -> outbound frames. Malformed input yields an
  // error frame and leaves the session untouched.
  std::vector<std::string> handle(const std::string& text) {
    std::vector<std::string> out;
    try {
      nlohmann::json msg;
      try {
        msg = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception&) {
        throw InputError("frame is not valid JSON");
      }
      if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
        throw InputError("frame needs a string 'type'");
      const auto type = msg["type"].get<std::string>();
      if (type == "action") {
        if (!msg.contains("a")) throw InputError("action frame needs 'a'");
        apply_action(vec_from_json(msg["a"]));
      } else if (type == "reset") {
        reset();
      } else if (type == "select_model") {
        if (!msg.contains("name") || !msg["name"].is_string()) throw InputError("select_model frame needs 'name'");
        select_model(msg["name"].get<std::string>());
        out.push_back(hello().dump());
      } else {
        throw InputError("unknown frame type '" + type + "'");
      }
      out.push_back(state_frame().dump());
    } catch (const Error& e) {
      out.push_back(error_frame(e.what()).dump());
    }
    return out;
  }

  void write_log(std::ostream& os) const {
    for (const auto& e : log_) os << event_to_json(e).dump() << '\n';
  }

 private:
  std::shared_ptr<const ModelStore> store_;
  std::string id_;
  double nu_;
  std::shared_ptr<const LoadedModel> model_;
  Vec origin_;
  Vec x_;
  long step_ = 0;
  std::vector<SessionEvent> log_;
};

// Re-executes a session log offline; returns the state after every event.
inline std::vector<Vec> replay_session(const ModelStore& store, const Vec& origin, double nu,
                                       const std::vector<SessionEvent>& log) {
  std::vector<Vec> states;
  Vec x = origin;
  for (const auto& e : log) {
    switch (e.kind) {
      case SessionEvent::Kind::action: {
        auto m = store.find(e.model);
        if (!m) throw InputError("replay: unknown model '" + e.model + "'");
        x = session_step(m->field(), store.arm(), x, e.action, nu);
        break;
      }
      case SessionEvent::Kind::reset:
        x = origin;
        break;
      case SessionEvent::Kind::select:
        break;
    }
    states.push_back(x);
  }
  return states;
}

inline std::vector<SessionEvent> read_session_log(std::istream& is) {
  std::vector<SessionEvent> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("session log: ") + e.what());
    }
  }
  return out;
}

}  // namespace revmap
