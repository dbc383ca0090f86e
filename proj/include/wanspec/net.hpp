#pragma once

#include "wanspec/controller.hpp"
#include "wanspec/rng.hpp"
#include "wanspec/types.hpp"
#include "wanspec/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace wanspec {

/// Monotonic clock in microseconds; the runtime's time base.
inline SimTime mono_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

class TcpSocket {
 public:
  TcpSocket() = default;
  explicit TcpSocket(int fd) : fd_(fd) {}
  TcpSocket(TcpSocket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  TcpSocket& operator=(TcpSocket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  TcpSocket(const TcpSocket&) = delete;
  TcpSocket& operator=(const TcpSocket&) = delete;
  ~TcpSocket() { close(); }

  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

  void send_all(std::span<const std::uint8_t> bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n <= 0) throw ProtocolError("net: send failed: " + std::string(strerror(errno)));
      off += static_cast<std::size_t>(n);
    }
  }

  /// Returns bytes read; 0 means the peer closed the connection.
  std::size_t recv_some(std::span<std::uint8_t> buf) {
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
      if (errno == ECONNRESET) return 0;
      throw ProtocolError("net: recv failed: " + std::string(strerror(errno)));
    }
    return static_cast<std::size_t>(n);
  }

 private:
  int fd_ = -1;
};

class TcpListener {
 public:
  TcpListener(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ProtocolError("net: socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw ConfigError("net: bad listen address " + host);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw ProtocolError("net: bind " + host + ":" + std::to_string(port) +
                          " failed: " + strerror(errno));
    if (::listen(fd_, 1) != 0) throw ProtocolError("net: listen failed");
    sockaddr_in got{};
    socklen_t len = sizeof(got);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&got), &len);
    port_ = ntohs(got.sin_port);
  }

  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  std::uint16_t port() const { return port_; }

  TcpSocket accept_one() {
    int conn = ::accept(fd_, nullptr, nullptr);
    if (conn < 0) throw ProtocolError("net: accept failed: " + std::string(strerror(errno)));
    int one = 1;
    ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return TcpSocket(conn);
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

inline TcpSocket tcp_connect(const std::string& host, std::uint16_t port,
                             int retries = 50, int retry_ms = 100) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("net: bad connect address " + host);
  for (int attempt = 0;; ++attempt) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("net: socket failed");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return TcpSocket(fd);
    }
    ::close(fd);
    if (attempt >= retries)
      throw ProtocolError("net: connect to " + host + ":" + std::to_string(port) +
                          " failed: " + strerror(errno));
    std::this_thread::sleep_for(std::chrono::milliseconds(retry_ms));
  }
}

/// Receiver-side latency emulation: frames become visible one_way_delay
/// (+/- uniform jitter) after they hit the socket, and never out of order.
struct LatencyEmulator {
  SimTime one_way = 0;
  SimTime jitter = 0;
  std::mt19937_64 rng{0x5eed};
  SimTime last_visible = 0;

  SimTime visible_at(SimTime arrival) {
    SimTime d = one_way;
    if (jitter > 0) d += uniform_jitter(rng, jitter);
    if (d < 0) d = 0;
    SimTime v = std::max(arrival + d, last_visible);
    last_visible = v;
    return v;
  }
};

/// Everything a protocol thread can be woken by: delayed frames from the
/// reader, completed model steps from the executors, or connection close.
class EventHub {
 public:
  struct TargetJobDone {
    std::uint64_t request = 0;
    StepTarget step;
  };
  struct DraftJobDone {
    std::uint64_t request = 0;
    StepDraftLocal step;
  };
  struct Woken {
    std::vector<Message> frames;
    std::optional<TargetJobDone> target;
    std::optional<DraftJobDone> draft;
    bool closed = false;
  };

  void push_frame(Message m, SimTime visible_at) {
    {
      std::lock_guard lk(mu_);
      frames_.emplace_back(visible_at, std::move(m));
    }
    cv_.notify_all();
  }

  void post_target_done(TargetJobDone d) {
    {
      std::lock_guard lk(mu_);
      target_done_ = std::move(d);
    }
    cv_.notify_all();
  }

  void post_draft_done(DraftJobDone d) {
    {
      std::lock_guard lk(mu_);
      draft_done_ = std::move(d);
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lk(mu_);
    return closed_;
  }

  Woken poll_now() {
    std::lock_guard lk(mu_);
    return collect(mono_us());
  }

  /// Blocks until a frame becomes visible, a step completes, the connection
  /// closes, or `deadline` (absolute, monotonic us) passes.
  Woken wait(std::optional<SimTime> deadline) {
    std::unique_lock lk(mu_);
    for (;;) {
      SimTime now = mono_us();
      Woken w = collect(now);
      if (!w.frames.empty() || w.target || w.draft || w.closed) return w;
      std::optional<SimTime> until = deadline;
      if (!frames_.empty())
        until = until ? std::min(*until, frames_.front().first) : frames_.front().first;
      if (until) {
        if (*until <= now) return w;
        cv_.wait_until(lk, std::chrono::steady_clock::time_point(
                               std::chrono::microseconds(*until)));
        if (deadline && mono_us() >= *deadline) return collect(mono_us());
      } else {
        cv_.wait(lk);
      }
    }
  }

 private:
  Woken collect(SimTime now) {
    Woken w;
    while (!frames_.empty() && frames_.front().first <= now) {
      w.frames.push_back(std::move(frames_.front().second));
      frames_.pop_front();
    }
    if (target_done_) {
      w.target = std::move(target_done_);
      target_done_.reset();
    }
    if (draft_done_) {
      w.draft = std::move(draft_done_);
      draft_done_.reset();
    }
    w.closed = closed_ && frames_.empty();
    return w;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<SimTime, Message>> frames_;  // visible_at monotone
  std::optional<TargetJobDone> target_done_;
  std::optional<DraftJobDone> draft_done_;
  bool closed_ = false;
};

/// Reader thread body: socket bytes -> frames -> hub, with emulated latency.
inline void run_reader(TcpSocket& sock, EventHub& hub, LatencyEmulator emu) {
  FrameReader reader;
  std::vector<std::uint8_t> buf(64 * 1024);
  try {
    for (;;) {
      std::size_t n = sock.recv_some(buf);
      if (n == 0) break;
      reader.feed(std::span<const std::uint8_t>(buf.data(), n));
      SimTime arrival = mono_us();
      while (auto m = reader.next()) hub.push_frame(std::move(*m), emu.visible_at(arrival));
    }
  } catch (const std::exception&) {
    // fall through to close; the protocol thread surfaces the failure
  }
  hub.close();
}

/// Writer thread: drains encoded frames in order. push() after close is a
/// silent no-op so shutdown paths stay simple.
class FrameWriter {
 public:
  explicit FrameWriter(TcpSocket& sock) : sock_(sock) {
    thread_ = std::thread([this] { run(); });
  }

  ~FrameWriter() { stop(); }

  void push(std::vector<std::uint8_t> frame) {
    {
      std::lock_guard lk(mu_);
      if (stopped_) return;
      queue_.push_back(std::move(frame));
    }
    cv_.notify_all();
  }

  /// Blocks until everything queued so far hit the socket.
  void flush() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [this] { return queue_.empty() || stopped_; });
  }

  void stop() {
    {
      std::lock_guard lk(mu_);
      stopped_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  bool failed() const {
    std::lock_guard lk(mu_);
    return failed_;
  }

 private:
  void run() {
    for (;;) {
      std::vector<std::uint8_t> frame;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [this] { return !queue_.empty() || stopped_; });
        if (queue_.empty()) return;
        frame = std::move(queue_.front());
        queue_.pop_front();
        if (queue_.empty()) cv_.notify_all();
      }
      try {
        sock_.send_all(frame);
      } catch (const std::exception&) {
        std::lock_guard lk(mu_);
        failed_ = true;
        stopped_ = true;
        queue_.clear();
        cv_.notify_all();
        return;
      }
    }
  }

  TcpSocket& sock_;
  std::thread thread_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> queue_;
  bool stopped_ = false;
  bool failed_ = false;
};

}  // namespace wanspec
