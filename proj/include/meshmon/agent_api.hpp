#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "meshmon/agent.hpp"
#include "meshmon/common.hpp"
#include "meshmon/envelope.hpp"

namespace meshmon::agent {

// Request handler: one request line in, full response text out (response
// lines include their trailing newlines).
using LineHandler = std::function<std::string(const std::string&)>;

// Minimal newline-delimited request server on loopback TCP. One thread per
// connection; a malformed request gets an err line and the connection stays
// usable.
class LineServer {
  public:
    LineServer() = default;
    ~LineServer() { stop(); }
    LineServer(const LineServer&) = delete;
    LineServer& operator=(const LineServer&) = delete;

    void start(LineHandler handler, uint16_t port = 0) {
        handler_ = std::move(handler);
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw IoError("bind: " + std::string(std::strerror(errno)));
        socklen_t len = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        if (::listen(listen_fd_, 16) != 0)
            throw IoError("listen: " + std::string(std::strerror(errno)));
        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (accept_thread_.joinable()) accept_thread_.join();
        for (auto& t : conn_threads_)
            if (t.joinable()) t.join();
        conn_threads_.clear();
    }

    uint16_t port() const { return port_; }

  private:
    void accept_loop() {
        while (running_) {
            pollfd pfd{listen_fd_, POLLIN, 0};
            int rc = ::poll(&pfd, 1, 100);
            if (!running_) break;
            if (rc <= 0) continue;
            int conn = ::accept(listen_fd_, nullptr, nullptr);
            if (conn < 0) continue;
            conn_threads_.emplace_back([this, conn] { serve_connection(conn); });
        }
    }

    void serve_connection(int fd) {
        timeval tv{0, 100000};  // keep reads short so stop() can join
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        std::string buf;
        char chunk[4096];
        while (running_) {
            auto nl = buf.find('\n');
            if (nl == std::string::npos) {
                ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
                if (n == 0) break;
                if (n < 0) {
                    if (errno == EAGAIN || errno == EWOULDBLOCK) continue;
                    break;
                }
                buf.append(chunk, static_cast<std::size_t>(n));
                continue;
            }
            std::string line = buf.substr(0, nl);
            buf.erase(0, nl + 1);
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string response = handler_(line);
            if (!send_all(fd, response)) break;
        }
        ::close(fd);
    }

    static bool send_all(int fd, const std::string& data) {
        std::size_t off = 0;
        while (off < data.size()) {
            ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
            if (n <= 0) return false;
            off += static_cast<std::size_t>(n);
        }
        return true;
    }

    LineHandler handler_;
    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::vector<std::thread> conn_threads_;
};

// Agent request protocol (docs/formats.md):
//   "list_since <int>" -> "ok <count>\n" then <count> envelope wire lines
//   "health"           -> "ok stored=<n> latest=<t>\n"   (latest=-1 when empty)
//   anything else      -> "err <reason>\n", connection stays usable
inline LineHandler make_agent_handler(const Agent& agent) {
    return [&agent](const std::string& request) -> std::string {
        auto tok = split_ws(request);
        if (tok.size() == 2 && tok[0] == "list_since") {
            SimTime t = 0;
            try {
                t = parse_int(tok[1], "list_since");
            } catch (const ConfigError&) {
                return "err bad_request list_since takes an integer\n";
            }
            auto records = agent.archive().list_since(t);
            std::string out = "ok " + std::to_string(records.size()) + "\n";
            for (const auto& r : records) out += to_wire_line(r) + "\n";
            return out;
        }
        if (tok.size() == 1 && tok[0] == "health") {
            auto latest = agent.archive().latest_stored_at();
            return "ok stored=" + std::to_string(agent.archive().size()) +
                   " latest=" + std::to_string(latest.value_or(-1)) + "\n";
        }
        return "err unknown_request\n";
    };
}

// What the collector polls. The TCP flavor speaks the protocol above; the
// in-process flavor serves the same archive without a socket (used by the
// scenario runner, where every component lives in one process).
class AgentEndpoint {
  public:
    virtual ~AgentEndpoint() = default;
    virtual std::vector<std::string> list_since(SimTime t) = 0;
    virtual std::string health() = 0;
};

class InProcessEndpoint : public AgentEndpoint {
  public:
    explicit InProcessEndpoint(const Agent& agent) : agent_(&agent) {}

    std::vector<std::string> list_since(SimTime t) override {
        std::vector<std::string> lines;
        for (const auto& r : agent_->archive().list_since(t)) lines.push_back(to_wire_line(r));
        return lines;
    }

    std::string health() override {
        auto latest = agent_->archive().latest_stored_at();
        return "ok stored=" + std::to_string(agent_->archive().size()) +
               " latest=" + std::to_string(latest.value_or(-1));
    }

  private:
    const Agent* agent_;
};

class TcpEndpoint : public AgentEndpoint {
  public:
    TcpEndpoint(std::string host, uint16_t port) : host_(std::move(host)), port_(port) {}
    ~TcpEndpoint() override {
        if (fd_ >= 0) ::close(fd_);
    }

    std::vector<std::string> list_since(SimTime t) override {
        std::string head = request_line("list_since " + std::to_string(t));
        auto tok = split_ws(head);
        if (tok.size() < 2 || tok[0] != "ok")
            throw ProtocolError("agent returned: " + head);
        std::size_t count = parse_uint(tok[1], "record count");
        std::vector<std::string> lines;
        lines.reserve(count);
        for (std::size_t i = 0; i < count; ++i) lines.push_back(read_line());
        return lines;
    }

    std::string health() override { return request_line("health"); }

  private:
    void ensure_connected() {
        if (fd_ >= 0) return;
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port_);
        if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
            ::close(fd_);
            fd_ = -1;
            throw IoError("bad address " + host_);
        }
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(fd_);
            fd_ = -1;
            throw IoError("agent unreachable at " + host_ + ":" + std::to_string(port_));
        }
    }

    std::string request_line(const std::string& req) {
        ensure_connected();
        std::string msg = req + "\n";
        std::size_t off = 0;
        while (off < msg.size()) {
            ssize_t n = ::send(fd_, msg.data() + off, msg.size() - off, MSG_NOSIGNAL);
            if (n <= 0) {
                ::close(fd_);
                fd_ = -1;
                throw IoError("agent connection lost");
            }
            off += static_cast<std::size_t>(n);
        }
        return read_line();
    }

    std::string read_line() {
        while (true) {
            auto nl = buf_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buf_.substr(0, nl);
                buf_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            char chunk[4096];
            ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n <= 0) {
                ::close(fd_);
                fd_ = -1;
                throw IoError("agent connection lost");
            }
            buf_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    std::string host_;
    uint16_t port_ = 0;
    int fd_ = -1;
    std::string buf_;
};

}  // namespace meshmon::agent
