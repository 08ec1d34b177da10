#include <gtest/gtest.h>

#include <thread>

#include "revmap/ws_server.hpp"

using namespace revmap;
using nlohmann::json;

namespace {

std::shared_ptr<ModelStore> make_store() {
  Architecture a;
  a.encoder_hidden = {8};
  a.feature_width = 6;
  a.tensor_hidden = {6};
  a.action_space = ActionSpace{2, 1.0, 1.0};
  auto s = std::make_shared<ModelStore>(ArmModel::planar());
  s->add("scn", Model::build("scn", a, 1));
  return s;
}

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/ws");
  }
  json recv() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  }
  void send(const std::string& s) { ws_.write(net::buffer(s)); }
  void close() { ws_.close(websocket::close_code::normal); }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

struct Running {
  WsServer server;
  std::thread thread;
  Running(std::shared_ptr<const ModelStore> store, ServerConfig cfg)
      : server(std::move(store), std::move(cfg)), thread([this] { server.run(); }) {}
  ~Running() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST(WsServer, ProtocolRoundTrip) {
  ServerConfig cfg;
  cfg.port = 0;
  cfg.session.nu = 0.1;
  Running run(make_store(), cfg);
  Client c(run.server.port());
  const json hello = c.recv();
  EXPECT_EQ(hello["type"], "hello");
  EXPECT_EQ(hello["nu"], 0.1);
  const json s0 = c.recv();
  EXPECT_EQ(s0["type"], "state");
  EXPECT_EQ(s0["step"], 0);

  c.send(R"({"type":"action","a":[0.4,-0.2]})");
  const json s1 = c.recv();
  EXPECT_EQ(s1["step"], 1);
  EXPECT_GT(s1["dist_origin"].get<double>(), 0.0);

  c.send("garbage");
  EXPECT_EQ(c.recv()["type"], "error");

  c.send(R"({"type":"reset"})");
  const json s2 = c.recv();
  EXPECT_EQ(s2["x"], s0["x"]);
  EXPECT_EQ(s2["dist_origin"], 0.0);
  c.close();
}

TEST(WsServer, SessionsAreIndependentAndLogged) {
  const auto dir = std::filesystem::temp_directory_path() / "revmap_ws_logs";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  ServerConfig cfg;
  cfg.port = 0;
  cfg.log_directory = dir;
  {
    Running run(make_store(), cfg);
    Client a(run.server.port()), b(run.server.port());
    a.recv();
    a.recv();
    b.recv();
    const json b0 = b.recv();
    a.send(R"({"type":"action","a":[0.5,0.5]})");
    a.recv();
    b.send(R"({"type":"action","a":[0,0]})");
    EXPECT_EQ(b.recv()["x"], b0["x"]);
    a.close();
    b.close();
  }
  long lines = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::ifstream is(e.path());
    for (std::string l; std::getline(is, l);) ++lines;
  }
  EXPECT_EQ(lines, 2);
}

TEST(WsServer, RejectsEmptyStore) {
  ServerConfig cfg;
  cfg.port = 0;
  EXPECT_THROW(WsServer(std::make_shared<ModelStore>(ArmModel::planar()), cfg), InputError);
}
