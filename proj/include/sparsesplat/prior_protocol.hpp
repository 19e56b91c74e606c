#pragma once

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <string>
#include <string_view>

#include "binary_io.hpp"
#include "errors.hpp"
#include "image.hpp"

namespace sparsesplat {

// Wire protocol of the prior service. Everything is little-endian.
//   handshake : "SIDP1" sent by the client, echoed by the server
//   request   : [u8 type][u32 H][u32 W][f32 x H*W*3]
//   depth     : [u32 H][u32 W][f32 x H*W]
//   features  : [u32 dim][f32 x dim]
//   error     : [u8 0xFF][u32 len][len bytes of UTF-8]
namespace protocol {

inline constexpr std::string_view kMagic = "SIDP1";
inline constexpr std::uint8_t kDepth = 1;
inline constexpr std::uint8_t kFeatures = 2;
inline constexpr std::uint8_t kError = 0xFF;

inline Bytes encode_request(std::uint8_t type, const Image& rgb) {
    if (rgb.channels != 3) throw InvalidInputError("prior request: image must be RGB");
    Bytes out;
    out.reserve(9 + rgb.size() * 4);
    put_u8(out, type);
    put_u32(out, static_cast<std::uint32_t>(rgb.height));
    put_u32(out, static_cast<std::uint32_t>(rgb.width));
    for (double v : rgb.data) put_f32(out, static_cast<float>(v));
    return out;
}

inline Bytes encode_depth_response(const Image& depth) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(depth.height));
    put_u32(out, static_cast<std::uint32_t>(depth.width));
    for (double v : depth.data) put_f32(out, static_cast<float>(v));
    return out;
}

inline Bytes encode_features_response(const FeatureEmbedding& e) {
    Bytes out;
    put_u32(out, static_cast<std::uint32_t>(e.dim()));
    for (double v : e.values) put_f32(out, static_cast<float>(v));
    return out;
}

inline Bytes encode_error(std::string_view message) {
    Bytes out;
    put_u8(out, kError);
    put_u32(out, static_cast<std::uint32_t>(message.size()));
    put_bytes(out, message);
    return out;
}

} // namespace protocol

// Parsed endpoint: "unix:/path/to/socket" or "host:port".
struct Endpoint {
    bool unix_socket = false;
    std::string host;
    std::string port;
    std::string path;

    static Endpoint parse(const std::string& text) {
        Endpoint e;
        if (text.rfind("unix:", 0) == 0) {
            e.unix_socket = true;
            e.path = text.substr(5);
            if (e.path.empty()) throw ConfigError("endpoint: empty unix socket path");
            return e;
        }
        const auto colon = text.rfind(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
            throw ConfigError("endpoint: expected host:port or unix:path, got \"" + text + "\"");
        }
        e.host = text.substr(0, colon);
        e.port = text.substr(colon + 1);
        return e;
    }
};

// Blocking client; one request in flight per connection.
class ServiceConnection {
public:
    ServiceConnection(const std::string& endpoint, double timeout_seconds) : endpoint_(endpoint) {
        const Endpoint ep = Endpoint::parse(endpoint);
        fd_ = ep.unix_socket ? connect_unix(ep.path) : connect_tcp(ep.host, ep.port);
        timeval tv{};
        tv.tv_sec = static_cast<time_t>(timeout_seconds);
        tv.tv_usec = static_cast<suseconds_t>((timeout_seconds - std::floor(timeout_seconds)) * 1e6);
        ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
        ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));

        Bytes hello;
        put_bytes(hello, protocol::kMagic);
        send_all(hello);
        const Bytes echo = recv_exact(protocol::kMagic.size());
        if (std::string_view(reinterpret_cast<const char*>(echo.data()), echo.size()) != protocol::kMagic) {
            close_fd();
            throw ServiceError("prior service " + endpoint_ + ": handshake rejected");
        }
    }
    ServiceConnection(const ServiceConnection&) = delete;
    ServiceConnection& operator=(const ServiceConnection&) = delete;
    ~ServiceConnection() { close_fd(); }

    DepthMap request_depth(const Image& rgb) {
        send_all(protocol::encode_request(protocol::kDepth, rgb));
        Bytes head = recv_exact(4);
        const std::uint32_t h = read_u32(head, 0);
        // A leading 0xFF is an error frame unless it is the expected height.
        if (head[0] == protocol::kError && h != static_cast<std::uint32_t>(rgb.height)) {
            const Bytes rest = recv_exact(1);
            const std::uint32_t len = (h >> 8) | (static_cast<std::uint32_t>(rest[0]) << 24);
            throw_error_message(len);
        }
        const std::uint32_t w = read_u32(recv_exact(4), 0);
        if (h != static_cast<std::uint32_t>(rgb.height) || w != static_cast<std::uint32_t>(rgb.width)) {
            throw DimensionMismatchError("prior service " + endpoint_ + ": depth response is " + std::to_string(h) +
                                         "x" + std::to_string(w) + ", requested " + std::to_string(rgb.height) +
                                         "x" + std::to_string(rgb.width));
        }
        const Bytes payload = recv_exact(static_cast<std::size_t>(h) * w * 4);
        DepthMap map(Image(static_cast<int>(w), static_cast<int>(h), 1));
        for (std::size_t i = 0; i < map.values.size(); ++i) {
            const double v = std::bit_cast<float>(read_u32(payload, 4 * i));
            map.values.data[i] = v;
            map.valid[i] = std::isfinite(v) ? 1 : 0;
        }
        return map;
    }

    FeatureEmbedding request_features(const Image& rgb) {
        send_all(protocol::encode_request(protocol::kFeatures, rgb));
        const Bytes first = recv_exact(1);
        if (first[0] == protocol::kError) throw_error_message(read_u32(recv_exact(4), 0));
        const Bytes rest = recv_exact(3);
        const std::uint32_t dim = first[0] | (static_cast<std::uint32_t>(rest[0]) << 8) |
                                  (static_cast<std::uint32_t>(rest[1]) << 16) |
                                  (static_cast<std::uint32_t>(rest[2]) << 24);
        const Bytes payload = recv_exact(static_cast<std::size_t>(dim) * 4);
        FeatureEmbedding e;
        e.values.resize(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            e.values[i] = std::bit_cast<float>(read_u32(payload, 4 * i));
            if (!std::isfinite(e.values[i])) throw ServiceError("prior service " + endpoint_ + ": non-finite feature");
        }
        return e;
    }

private:
    static std::uint32_t read_u32(const Bytes& b, std::size_t at) {
        return b[at] | (static_cast<std::uint32_t>(b[at + 1]) << 8) | (static_cast<std::uint32_t>(b[at + 2]) << 16) |
               (static_cast<std::uint32_t>(b[at + 3]) << 24);
    }

    [[noreturn]] void throw_error_message(std::uint32_t len) {
        if (len > (1u << 20)) throw ServiceError("prior service " + endpoint_ + ": malformed error frame");
        const Bytes msg = recv_exact(len);
        throw ServiceError(std::string(msg.begin(), msg.end()));
    }

    int connect_unix(const std::string& path) {
        const int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (fd < 0) throw ServiceError("socket: " + std::string(std::strerror(errno)));
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        if (path.size() >= sizeof(addr.sun_path)) {
            ::close(fd);
            throw ConfigError("endpoint: unix socket path too long");
        }
        std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            const std::string err = std::strerror(errno);
            ::close(fd);
            throw ServiceError("prior service unreachable at " + endpoint_ + ": " + err);
        }
        return fd;
    }

    int connect_tcp(const std::string& host, const std::string& port) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
            throw ServiceError("prior service unreachable at " + endpoint_ + ": cannot resolve host");
        }
        std::string err = "no address";
        int fd = -1;
        for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
            fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
            err = std::strerror(errno);
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(res);
        if (fd < 0) throw ServiceError("prior service unreachable at " + endpoint_ + ": " + err);
        const int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        return fd;
    }

    void send_all(const Bytes& data) {
        std::size_t sent = 0;
        while (sent < data.size()) {
            const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) fail("send");
            sent += static_cast<std::size_t>(n);
        }
    }

    Bytes recv_exact(std::size_t count) {
        Bytes out(count);
        std::size_t got = 0;
        while (got < count) {
            const ssize_t n = ::recv(fd_, out.data() + got, count - got, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n == 0) throw ServiceError("prior service " + endpoint_ + ": connection closed mid-frame");
            if (n < 0) fail("recv");
            got += static_cast<std::size_t>(n);
        }
        return out;
    }

    [[noreturn]] void fail(const char* op) {
        const int e = errno;
        if (e == EAGAIN || e == EWOULDBLOCK) throw ServiceError("prior service " + endpoint_ + ": timeout");
        throw ServiceError("prior service " + endpoint_ + ": " + op + " failed: " + std::strerror(e));
    }

    void close_fd() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    std::string endpoint_;
    int fd_ = -1;
};

} // namespace sparsesplat
