#include <doctest.h>

#include "stackbundle/frame.hpp"

using namespace stackbundle;

TEST_CASE("heartbeat golden bytes") {
    const auto bytes = encode_frame(Opcode::Heartbeat, {});
    REQUIRE(bytes.size() == 5);
    CHECK(bytes[0] == 0x00);
    CHECK(bytes[1] == 0x00);
    CHECK(bytes[2] == 0x00);
    CHECK(bytes[3] == 0x00);
    CHECK(bytes[4] == 0x08);
}

TEST_CASE("round trip over all opcodes and payload sizes") {
    const Opcode ops[] = {Opcode::Register,  Opcode::RegisterAck, Opcode::Task,
                          Opcode::TaskResult, Opcode::BlockGet,    Opcode::BlockData,
                          Opcode::Broadcast,  Opcode::Heartbeat,   Opcode::Shutdown,
                          Opcode::Error};
    const std::size_t sizes[] = {0, 1, 1024 * 1024};
    for (Opcode op : ops) {
        for (std::size_t n : sizes) {
            std::vector<std::uint8_t> payload(n);
            for (std::size_t i = 0; i < n; ++i) payload[i] = std::uint8_t(i * 31 + 7);
            const auto bytes = encode_frame(op, payload);
            REQUIRE(bytes.size() == n + 5);
            std::size_t consumed = 0;
            const Frame f = decode_frame(bytes.data(), bytes.size(), &consumed);
            CHECK(consumed == bytes.size());
            CHECK(f.opcode == op);
            CHECK(f.payload == payload);
        }
    }
}

TEST_CASE("malformed frames are rejected") {
    // truncated header / payload
    const auto ok = encode_frame(Opcode::Task, {1, 2, 3});
    std::size_t consumed = 0;
    CHECK_THROWS_AS(decode_frame(ok.data(), 3, &consumed), FramingError);
    CHECK_THROWS_AS(decode_frame(ok.data(), ok.size() - 1, &consumed), FramingError);

    // unknown opcode
    auto bad = ok;
    bad[4] = 0x7f;
    CHECK_THROWS_AS(decode_frame(bad.data(), bad.size(), &consumed), ProtocolError);

    // length exceeding the cap, checked before any allocation
    std::uint8_t oversized[5] = {0, 0, 0, 0, 0x03};
    const std::uint32_t len = kMaxFramePayload + 1;
    oversized[0] = std::uint8_t(len & 0xff);
    oversized[1] = std::uint8_t((len >> 8) & 0xff);
    oversized[2] = std::uint8_t((len >> 16) & 0xff);
    oversized[3] = std::uint8_t((len >> 24) & 0xff);
    CHECK_THROWS_AS(decode_frame(oversized, 5, &consumed), ProtocolError);
}

TEST_CASE("mixed json+binary payload round trip") {
    const std::string json = R"({"stage_id":7})";
    const std::vector<std::uint8_t> binary = {0xde, 0xad, 0xbe, 0xef};
    const auto payload = pack_payload(json, binary);
    const auto [j, b] = unpack_payload(payload);
    CHECK(j == json);
    CHECK(b == binary);

    const auto empty = pack_payload("", {});
    const auto [j2, b2] = unpack_payload(empty);
    CHECK(j2.empty());
    CHECK(b2.empty());
}
