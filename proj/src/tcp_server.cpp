#include "copilot/tcp_server.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/read.hpp>
#include <boost/asio/write.hpp>
#include <deque>
#include <mutex>

namespace copilot {

namespace asio = boost::asio;
using asio::ip::tcp;

class TcpServer::Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(SessionService& service, tcp::socket socket)
      : service_(service), socket_(std::move(socket)) {}

  void start() {
    auto weak = std::weak_ptr<Connection>(shared_from_this());
    id_ = service_.connect([weak](const WireMessage& m) {
      if (auto self = weak.lock()) self->queue(encode_frame(m));
    });
    read_header();
  }

 private:
  // Called from any thread; writes are funneled through the socket's executor.
  void queue(std::string frame) {
    asio::post(socket_.get_executor(), [self = shared_from_this(), frame = std::move(frame)]() mutable {
      self->outbox_.push_back(std::move(frame));
      if (self->outbox_.size() == 1) self->write_next();
    });
  }

  void write_next() {
    asio::async_write(socket_, asio::buffer(outbox_.front()),
                      [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                        if (ec) return self->close();
                        self->outbox_.pop_front();
                        if (!self->outbox_.empty()) {
                          self->write_next();
                        } else if (self->closing_) {
                          self->close();
                        }
                      });
  }

  void read_header() {
    asio::async_read(socket_, asio::buffer(header_),
                     [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                       if (ec) return self->close();
                       std::uint32_t n = 0;
                       try {
                         n = decode_frame_length(self->header_);
                       } catch (const ProtocolError& e) {
                         // The stream cannot be resynchronized after a bad length.
                         self->queue(encode_frame(make_error("", 0, "bad_frame", e.what())));
                         return self->close_after_flush();
                       }
                       self->read_body(n);
                     });
  }

  void read_body(std::uint32_t n) {
    body_.assign(n, '\0');
    asio::async_read(socket_, asio::buffer(body_),
                     [self = shared_from_this()](boost::system::error_code ec, std::size_t) {
                       if (ec) return self->close();
                       try {
                         self->service_.submit(self->id_, decode_frame_body(self->body_));
                       } catch (const ProtocolError& e) {
                         self->queue(encode_frame(make_error("", 0, "bad_frame", e.what())));
                       }
                       self->read_header();
                     });
  }

  void close_after_flush() {
    asio::post(socket_.get_executor(), [self = shared_from_this()] {
      self->closing_ = true;
      if (self->outbox_.empty()) self->close();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    service_.disconnect(id_);
    boost::system::error_code ignored;
    socket_.close(ignored);
  }

  SessionService& service_;
  tcp::socket socket_;
  ConnectionId id_ = 0;
  std::array<unsigned char, kFrameHeaderBytes> header_{};
  std::string body_;
  std::deque<std::string> outbox_;
  bool closing_ = false;
  bool closed_ = false;
};

TcpServer::TcpServer(SessionService& service, const std::string& address, std::uint16_t port)
    : service_(service), acceptor_(io_) {
  const tcp::endpoint ep(asio::ip::make_address(address), port);
  acceptor_.open(ep.protocol());
  acceptor_.set_option(tcp::acceptor::reuse_address(true));
  acceptor_.bind(ep);
  acceptor_.listen();
  port_ = acceptor_.local_endpoint().port();
  accept();
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::accept() {
  acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<Connection>(service_, std::move(socket))->start();
    accept();
  });
}

void TcpServer::run() { io_.run(); }

void TcpServer::start() {
  thread_ = std::thread([this] { io_.run(); });
}

void TcpServer::stop() {
  asio::post(io_, [this] {
    boost::system::error_code ignored;
    acceptor_.close(ignored);
  });
  io_.stop();
  if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------------------

FrameClient::FrameClient(const std::string& host, std::uint16_t port) : socket_(io_) {
  tcp::resolver resolver(io_);
  asio::connect(socket_, resolver.resolve(host, std::to_string(port)));
}

FrameClient::~FrameClient() {
  boost::system::error_code ignored;
  socket_.close(ignored);
}

void FrameClient::send(const WireMessage& message) { send_raw(encode_frame(message)); }

void FrameClient::send_raw(const std::string& bytes) { asio::write(socket_, asio::buffer(bytes)); }

std::optional<WireMessage> FrameClient::receive(std::chrono::milliseconds timeout) {
  std::array<unsigned char, kFrameHeaderBytes> header{};
  std::string body;
  bool ok = false;
  io_.restart();
  asio::async_read(socket_, asio::buffer(header), [&](boost::system::error_code ec, std::size_t) {
    if (ec) return;
    body.assign(decode_frame_length(header), '\0');
    asio::async_read(socket_, asio::buffer(body),
                     [&](boost::system::error_code ec2, std::size_t) { ok = !ec2; });
  });
  io_.run_for(timeout);
  if (!ok) {
    // A timed-out partial read leaves the stream unusable.
    if (!io_.stopped()) {
      boost::system::error_code ignored;
      socket_.cancel(ignored);
      io_.run();
    }
    return std::nullopt;
  }
  return decode_frame_body(body);
}

std::optional<WireMessage> FrameClient::receive_kind(WireKind kind,
                                                     std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return std::nullopt;
    auto m = receive(left);
    if (!m) return std::nullopt;
    if (m->kind == kind) return m;
  }
}

}  // namespace copilot
