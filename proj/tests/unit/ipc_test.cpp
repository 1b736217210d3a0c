#include <gtest/gtest.h>
#include <sys/socket.h>

#include <random>

#include "certgate/core/socket.hpp"
#include "certgate/engine/ipc.hpp"

using namespace certgate;
using namespace certgate::engine;

namespace {

Bytes random_bytes(std::mt19937& rng, std::size_t max) {
  Bytes out(std::uniform_int_distribution<std::size_t>(0, max)(rng));
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

ValidationQuery random_query(std::mt19937& rng) {
  ValidationQuery q;
  q.id = (static_cast<std::uint64_t>(rng()) << 32) | rng();
  auto host = random_bytes(rng, 40);
  q.hostname.assign(host.begin(), host.end());
  std::array<std::uint8_t, 16> raw{};
  for (auto& b : raw) b = static_cast<std::uint8_t>(rng());
  q.address = IpAddress(raw);
  q.port = static_cast<std::uint16_t>(rng());
  q.client_hello_raw = random_bytes(rng, 600);
  q.server_hello_raw = random_bytes(rng, 200);
  const auto n = rng() % 4;
  for (std::size_t i = 0; i < n; ++i) q.chain.push_back(random_bytes(rng, 1500));
  return q;
}

Bytes body_of(const Bytes& frame) {
  EXPECT_GE(frame.size(), 5u);
  EXPECT_EQ(read_be(frame, 0, 4), frame.size() - 4);
  return Bytes(frame.begin() + 4, frame.end());
}

void expect_same(const ValidationQuery& a, const ValidationQuery& b) {
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.hostname, b.hostname);
  EXPECT_EQ(a.address, b.address);
  EXPECT_EQ(a.port, b.port);
  EXPECT_EQ(a.client_hello_raw, b.client_hello_raw);
  EXPECT_EQ(a.server_hello_raw, b.server_hello_raw);
  EXPECT_EQ(a.chain, b.chain);
}

}  // namespace

TEST(Ipc, QueryLayout) {
  ValidationQuery q;
  q.id = 0x0102030405060708;
  q.hostname = "ab";
  q.address = IpAddress::v4(10, 0, 0, 1);
  q.port = 443;
  q.client_hello_raw = {0xaa};
  q.chain = {{0x30, 0x00}};
  const auto frame = ipc::encode(ipc::QueryFrame{ipc::FrameType::Query, q});
  const Bytes expected = {
      0, 0, 0, 48,                                     // length
      0x01,                                            // type
      1, 2, 3, 4, 5, 6, 7, 8,                          // id
      0, 2, 'a', 'b',                                  // hostname
      0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff, 10, 0, 0, 1,  // address
      0x01, 0xbb,                                      // port
      0, 0, 0, 1, 0xaa,                                // client hello
      0, 0, 0, 0,                                      // server hello
      0, 1, 0, 0, 0, 2, 0x30, 0x00,                    // chain
  };
  EXPECT_EQ(frame, expected);
}

TEST(Ipc, ResponseLayout) {
  ipc::ResponseFrame r;
  r.id = 9;
  r.decision.value = Decision::Invalid;
  r.decision.scrambled_leaf = Bytes{1, 2, 3};
  EXPECT_EQ(ipc::encode(r), (Bytes{0, 0, 0, 17, 0x02, 0, 0, 0, 0, 0, 0, 0, 9, 0, 0, 0, 0, 3, 1, 2, 3}));
  r.decision = {Decision::Valid, std::nullopt};
  EXPECT_EQ(ipc::encode(r), (Bytes{0, 0, 0, 14, 0x02, 0, 0, 0, 0, 0, 0, 0, 9, 1, 0, 0, 0, 0}));
}

TEST(Ipc, DirectResponseLayout) {
  ipc::DirectResponseFrame r;
  r.id = 1;
  r.decision.value = Decision::Valid;
  r.verdicts = {{"ca", PluginVerdict::Valid}, {"pin", PluginVerdict::Abstain}};
  EXPECT_EQ(ipc::encode(r), (Bytes{0, 0, 0, 27, 0x04, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 2, 0, 2, 'c', 'a',
                                   1, 0, 3, 'p', 'i', 'n', 2}));
}

TEST(Ipc, RoundTripProperty) {
  std::mt19937 rng(1234);
  for (int i = 0; i < 500; ++i) {
    const auto q = random_query(rng);
    const auto type = i % 2 ? ipc::FrameType::Query : ipc::FrameType::DirectRequest;
    auto decoded = ipc::decode(body_of(ipc::encode(ipc::QueryFrame{type, q})));
    auto* f = std::get_if<ipc::QueryFrame>(&decoded);
    ASSERT_NE(f, nullptr);
    EXPECT_EQ(f->type, type);
    expect_same(f->query, q);

    ipc::DirectResponseFrame d;
    d.id = q.id;
    d.decision.value = i % 3 ? Decision::Invalid : Decision::Valid;
    if (d.decision.value == Decision::Invalid && i % 5) d.decision.scrambled_leaf = random_bytes(rng, 300);
    for (std::size_t k = 0; k < rng() % 5; ++k) {
      d.verdicts.emplace_back("plugin" + std::to_string(k), static_cast<PluginVerdict>(rng() % 4));
    }
    auto back = ipc::decode(body_of(ipc::encode(d)));
    auto* dr = std::get_if<ipc::DirectResponseFrame>(&back);
    ASSERT_NE(dr, nullptr);
    EXPECT_EQ(dr->id, d.id);
    EXPECT_EQ(dr->decision.value, d.decision.value);
    EXPECT_EQ(dr->decision.scrambled_leaf.value_or(Bytes{}), d.decision.scrambled_leaf.value_or(Bytes{}));
    EXPECT_EQ(dr->verdicts, d.verdicts);
  }
}

TEST(Ipc, EveryTruncationRejected) {
  std::mt19937 rng(99);
  auto q = random_query(rng);
  q.chain = {Bytes(20, 0x30)};
  const auto body = body_of(ipc::encode(ipc::QueryFrame{ipc::FrameType::Query, q}));
  for (std::size_t n = 0; n < body.size(); ++n) {
    EXPECT_THROW(ipc::decode(ByteView(body.data(), n)), ipc::ProtocolError) << n;
  }
  auto longer = body;
  longer.push_back(0);
  EXPECT_THROW(ipc::decode(longer), ipc::ProtocolError);
}

TEST(Ipc, BadBytesRejected) {
  EXPECT_THROW(ipc::decode(Bytes{0x09}), ipc::ProtocolError);
  EXPECT_THROW(ipc::decode(Bytes{0x00}), ipc::ProtocolError);
  // decision byte 2
  EXPECT_THROW(ipc::decode(Bytes{0x02, 0, 0, 0, 0, 0, 0, 0, 1, 2, 0, 0, 0, 0}), ipc::ProtocolError);
  // Valid with a scrambled leaf attached
  EXPECT_THROW(ipc::decode(Bytes{0x02, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 7}), ipc::ProtocolError);
  // verdict byte 4
  EXPECT_THROW(ipc::decode(Bytes{0x05, 0, 0, 0, 0, 0, 0, 0, 1, 4}), ipc::ProtocolError);
}

TEST(Ipc, AddonFrames) {
  auto v = ipc::decode(body_of(ipc::encode(ipc::AddonVerdictFrame{77, PluginVerdict::Abstain})));
  EXPECT_EQ(std::get<ipc::AddonVerdictFrame>(v).id, 77u);
  EXPECT_EQ(std::get<ipc::AddonVerdictFrame>(v).verdict, PluginVerdict::Abstain);
  auto r = ipc::decode(body_of(ipc::encode(ipc::AddonReadyFrame{false, "no db"})));
  EXPECT_FALSE(std::get<ipc::AddonReadyFrame>(r).ok);
  EXPECT_EQ(std::get<ipc::AddonReadyFrame>(r).message, "no db");
}

TEST(Ipc, ReadFrameFromSocket) {
  int sv[2];
  ASSERT_EQ(socketpair(AF_UNIX, SOCK_STREAM, 0, sv), 0);
  UniqueFd a(sv[0]), b(sv[1]);
  const auto frame = ipc::encode(ipc::AddonVerdictFrame{5, PluginVerdict::Valid});
  // Deliver the frame in two writes to exercise partial reads.
  write_all(a.get(), ByteView(frame.data(), 3));
  write_all(a.get(), ByteView(frame.data() + 3, frame.size() - 3));
  auto body = ipc::read_frame(b.get());
  ASSERT_TRUE(body);
  EXPECT_EQ(*body, Bytes(frame.begin() + 4, frame.end()));

  const Bytes huge = {0x7f, 0xff, 0xff, 0xff};
  write_all(a.get(), huge);
  EXPECT_THROW(ipc::read_frame(b.get()), ipc::ProtocolError);
  a.reset();
  EXPECT_FALSE(ipc::read_frame(b.get()));
}
