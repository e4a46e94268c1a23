#pragma once

#include <optional>
#include <string>

#include "stackbundle/frame.hpp"

namespace stackbundle {

/// Thin RAII wrapper over a connected TCP socket with frame send/receive.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket();
    Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    Socket& operator=(Socket&& o) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    static Socket connect(const std::string& host, int port);

    bool valid() const { return fd_ >= 0; }
    void close();
    /// Wake a peer (or our own reader thread) blocked on this socket.
    void shutdown_both();

    void send_frame(Opcode op, const std::vector<std::uint8_t>& payload);
    /// Blocks; std::nullopt on orderly peer close. timeout_ms < 0 blocks
    /// forever; on timeout throws JobError.
    std::optional<Frame> recv_frame(int timeout_ms = -1);

private:
    void send_all(const std::uint8_t* data, std::size_t len);
    bool recv_all(std::uint8_t* data, std::size_t len, int timeout_ms);

    int fd_ = -1;
};

class Listener {
public:
    Listener(const std::string& bind_addr, int port);
    ~Listener();
    Listener(const Listener&) = delete;

    Socket accept();
    int port() const { return port_; }
    /// Wakes a blocked accept() with an error.
    void close();

private:
    int fd_ = -1;
    int port_ = 0;
};

/// "host:port" -> pair
std::pair<std::string, int> parse_addr(const std::string& addr);

} // namespace stackbundle
