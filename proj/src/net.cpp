#include "stackbundle/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace stackbundle {

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& o) noexcept {
    if (this != &o) {
        close();
        fd_ = o.fd_;
        o.fd_ = -1;
    }
    return *this;
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

void Socket::shutdown_both() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Socket Socket::connect(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_s = std::to_string(port);
    if (getaddrinfo(host.c_str(), port_s.c_str(), &hints, &res) != 0 || !res)
        throw JobError("connect: cannot resolve " + host);
    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
        freeaddrinfo(res);
        throw JobError("connect: socket() failed");
    }
    if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
        freeaddrinfo(res);
        ::close(fd);
        throw JobError("connect: cannot reach " + host + ":" + port_s);
    }
    freeaddrinfo(res);
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Socket(fd);
}

void Socket::send_all(const std::uint8_t* data, std::size_t len) {
    std::size_t sent = 0;
    while (sent < len) {
        const ssize_t n = ::send(fd_, data + sent, len - sent, MSG_NOSIGNAL);
        if (n <= 0) throw JobError("send: connection lost");
        sent += static_cast<std::size_t>(n);
    }
}

bool Socket::recv_all(std::uint8_t* data, std::size_t len, int timeout_ms) {
    std::size_t got = 0;
    while (got < len) {
        if (timeout_ms >= 0) {
            pollfd pfd{fd_, POLLIN, 0};
            const int pr = ::poll(&pfd, 1, timeout_ms);
            if (pr == 0) throw JobError("recv: timeout");
            if (pr < 0) throw JobError("recv: poll failed");
        }
        const ssize_t n = ::recv(fd_, data + got, len - got, 0);
        if (n == 0) {
            if (got == 0) return false;  // orderly close between frames
            throw FramingError("recv: truncated stream");
        }
        if (n < 0) {
            if (errno == EINTR) continue;
            throw JobError("recv: connection error");
        }
        got += static_cast<std::size_t>(n);
    }
    return true;
}

void Socket::send_frame(Opcode op, const std::vector<std::uint8_t>& payload) {
    auto bytes = encode_frame(op, payload);
    send_all(bytes.data(), bytes.size());
}

std::optional<Frame> Socket::recv_frame(int timeout_ms) {
    std::uint8_t header[5];
    if (!recv_all(header, 5, timeout_ms)) return std::nullopt;
    std::uint32_t plen = 0;
    for (int i = 0; i < 4; ++i) plen |= static_cast<std::uint32_t>(header[i]) << (8 * i);
    if (plen > kMaxFramePayload) throw ProtocolError("frame: length exceeds cap");
    const std::uint8_t op = header[4];
    if (op < 0x01 || op > 0x0A) throw ProtocolError("frame: unknown opcode");
    Frame f;
    f.opcode = static_cast<Opcode>(op);
    f.payload.resize(plen);
    if (plen > 0 && !recv_all(f.payload.data(), plen, timeout_ms))
        throw FramingError("recv: truncated stream");
    return f;
}

Listener::Listener(const std::string& bind_addr, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw JobError("listen: socket() failed");
    int one = 1;
    setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (bind_addr.empty() || bind_addr == "0.0.0.0")
        addr.sin_addr.s_addr = INADDR_ANY;
    else if (inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) != 1)
        throw ConfigError("listen: bad bind address " + bind_addr);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw JobError("listen: bind failed on port " + std::to_string(port));
    }
    if (::listen(fd_, 64) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw JobError("listen: listen() failed");
    }
    socklen_t alen = sizeof(addr);
    getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
    port_ = ntohs(addr.sin_port);
}

Listener::~Listener() { close(); }

void Listener::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

Socket Listener::accept() {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw JobError("accept failed");
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Socket(fd);
}

std::pair<std::string, int> parse_addr(const std::string& addr) {
    const auto pos = addr.rfind(':');
    if (pos == std::string::npos)
        throw ConfigError("address must be host:port, got " + addr);
    return {addr.substr(0, pos), std::stoi(addr.substr(pos + 1))};
}

} // namespace stackbundle
