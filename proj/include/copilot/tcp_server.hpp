#pragma once

// TCP front end for SessionService speaking the length-delimited frame
// protocol, plus a small blocking client used by tests and tooling.

#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "copilot/session_service.hpp"

namespace copilot {

class TcpServer {
 public:
  // Port 0 binds an ephemeral port; port() reports the bound one.
  TcpServer(SessionService& service, const std::string& address, std::uint16_t port);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }

  // run() blocks the caller; start() runs the loop on a background thread.
  void run();
  void start();
  void stop();

 private:
  class Connection;
  void accept();

  SessionService& service_;
  boost::asio::io_context io_;
  boost::asio::ip::tcp::acceptor acceptor_;
  std::uint16_t port_ = 0;
  std::thread thread_;
};

class FrameClient {
 public:
  FrameClient(const std::string& host, std::uint16_t port);
  ~FrameClient();

  void send(const WireMessage& message);
  // Sends raw bytes, for exercising framing errors.
  void send_raw(const std::string& bytes);
  // Waits up to `timeout` for the next frame; nullopt on timeout or EOF.
  std::optional<WireMessage> receive(std::chrono::milliseconds timeout = std::chrono::seconds(5));
  // Skips frames until one of `kind` arrives.
  std::optional<WireMessage> receive_kind(WireKind kind,
                                          std::chrono::milliseconds timeout = std::chrono::seconds(5));

 private:
  boost::asio::io_context io_;
  boost::asio::ip::tcp::socket socket_;
};

}  // namespace copilot
