#include "certgate/engine/ipc.hpp"

#include "certgate/core/socket.hpp"

namespace certgate::engine::ipc {

namespace {

class Writer {
 public:
  explicit Writer(FrameType type) {
    out_.resize(4);
    out_.push_back(static_cast<std::uint8_t>(type));
  }

  Writer& u8(std::uint64_t v) { return put(v, 1); }
  Writer& u16(std::uint64_t v) { return put(v, 2); }
  Writer& u32(std::uint64_t v) { return put(v, 4); }
  Writer& u64(std::uint64_t v) { return put(v, 8); }
  Writer& raw(ByteView b) {
    out_.insert(out_.end(), b.begin(), b.end());
    return *this;
  }
  Writer& blob16(ByteView b) {
    if (b.size() > 0xffff) throw ProtocolError("field too long for u16 length");
    return u16(b.size()).raw(b);
  }
  Writer& blob32(ByteView b) { return u32(b.size()).raw(b); }

  Bytes finish() {
    const std::size_t body = out_.size() - 4;
    if (body > kMaxFrameLength) throw ProtocolError("frame too large");
    for (int i = 0; i < 4; ++i) out_[i] = static_cast<std::uint8_t>(body >> (8 * (3 - i)));
    return std::move(out_);
  }

 private:
  Writer& put(std::uint64_t v, std::size_t width) {
    append_be(out_, v, width);
    return *this;
  }
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(ByteView data) : data_(data) {}

  std::uint64_t number(std::size_t width) {
    need(width);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v = (v << 8) | data_[pos_++];
    return v;
  }
  ByteView take(std::size_t n) {
    need(n);
    auto v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }
  Bytes blob(std::size_t width) {
    auto v = take(number(width));
    return Bytes(v.begin(), v.end());
  }
  void finish() const {
    if (pos_ != data_.size()) throw ProtocolError("trailing bytes in frame");
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ProtocolError("truncated frame");
  }
  ByteView data_;
  std::size_t pos_ = 0;
};

Decision decision_byte(std::uint64_t v) {
  if (v > 1) throw ProtocolError("bad decision byte");
  return static_cast<Decision>(v);
}

void put_decision(Writer& w, const PolicyDecision& d) {
  w.u8(static_cast<std::uint8_t>(d.value));
  if (d.value == Decision::Valid || !d.scrambled_leaf) {
    w.u32(0);
  } else {
    w.blob32(*d.scrambled_leaf);
  }
}

PolicyDecision get_decision(Reader& r) {
  PolicyDecision d;
  d.value = decision_byte(r.number(1));
  auto leaf = r.blob(4);
  if (!leaf.empty()) {
    if (d.value == Decision::Valid) throw ProtocolError("valid response carries a scrambled leaf");
    d.scrambled_leaf = std::move(leaf);
  }
  return d;
}

}  // namespace

Bytes encode(const QueryFrame& frame) {
  if (frame.type != FrameType::Query && frame.type != FrameType::DirectRequest) {
    throw ProtocolError("query frame must be Query or DirectRequest");
  }
  const auto& q = frame.query;
  Writer w(frame.type);
  w.u64(q.id).blob16(to_bytes(q.hostname)).raw(q.address.raw()).u16(q.port);
  w.blob32(q.client_hello_raw).blob32(q.server_hello_raw);
  if (q.chain.size() > 0xffff) throw ProtocolError("chain too long");
  w.u16(q.chain.size());
  for (const auto& der : q.chain) w.blob32(der);
  return w.finish();
}

Bytes encode(const ResponseFrame& frame) {
  Writer w(FrameType::Response);
  w.u64(frame.id);
  put_decision(w, frame.decision);
  return w.finish();
}

Bytes encode(const DirectResponseFrame& frame) {
  Writer w(FrameType::DirectResponse);
  w.u64(frame.id);
  put_decision(w, frame.decision);
  w.u16(frame.verdicts.size());
  for (const auto& [name, verdict] : frame.verdicts) {
    w.blob16(to_bytes(name)).u8(static_cast<std::uint8_t>(verdict));
  }
  return w.finish();
}

Bytes encode(const AddonVerdictFrame& frame) {
  Writer w(FrameType::AddonVerdict);
  w.u64(frame.id).u8(static_cast<std::uint8_t>(frame.verdict));
  return w.finish();
}

Bytes encode(const AddonReadyFrame& frame) {
  Writer w(FrameType::AddonReady);
  w.u8(frame.ok ? 0 : 1).blob16(to_bytes(frame.message));
  return w.finish();
}

Frame decode(ByteView body) {
  Reader r(body);
  const auto type = static_cast<FrameType>(r.number(1));
  switch (type) {
    case FrameType::Query:
    case FrameType::DirectRequest: {
      QueryFrame f;
      f.type = type;
      auto& q = f.query;
      q.id = r.number(8);
      auto host = r.blob(2);
      q.hostname.assign(host.begin(), host.end());
      auto raw = r.take(16);
      std::array<std::uint8_t, 16> addr{};
      std::copy(raw.begin(), raw.end(), addr.begin());
      q.address = IpAddress(addr);
      q.port = static_cast<std::uint16_t>(r.number(2));
      q.client_hello_raw = r.blob(4);
      q.server_hello_raw = r.blob(4);
      const auto count = r.number(2);
      for (std::uint64_t i = 0; i < count; ++i) q.chain.push_back(r.blob(4));
      r.finish();
      return f;
    }
    case FrameType::Response: {
      ResponseFrame f;
      f.id = r.number(8);
      f.decision = get_decision(r);
      r.finish();
      return f;
    }
    case FrameType::DirectResponse: {
      DirectResponseFrame f;
      f.id = r.number(8);
      f.decision = get_decision(r);
      const auto count = r.number(2);
      for (std::uint64_t i = 0; i < count; ++i) {
        auto name = r.blob(2);
        auto verdict = verdict_from_wire(static_cast<std::uint8_t>(r.number(1)));
        if (!verdict) throw ProtocolError("bad verdict byte");
        f.verdicts.emplace_back(std::string(name.begin(), name.end()), *verdict);
      }
      r.finish();
      return f;
    }
    case FrameType::AddonVerdict: {
      AddonVerdictFrame f;
      f.id = r.number(8);
      auto verdict = verdict_from_wire(static_cast<std::uint8_t>(r.number(1)));
      if (!verdict) throw ProtocolError("bad verdict byte");
      f.verdict = *verdict;
      r.finish();
      return f;
    }
    case FrameType::AddonReady: {
      AddonReadyFrame f;
      f.ok = r.number(1) == 0;
      auto msg = r.blob(2);
      f.message.assign(msg.begin(), msg.end());
      r.finish();
      return f;
    }
  }
  throw ProtocolError("unknown frame type " + std::to_string(static_cast<int>(type)));
}

std::optional<Bytes> read_frame(int fd) {
  std::uint8_t header[4];
  if (!read_exact(fd, header, sizeof(header))) return std::nullopt;
  const std::size_t length = read_be(ByteView(header, 4), 0, 4);
  if (length == 0 || length > kMaxFrameLength) throw ProtocolError("bad frame length");
  Bytes body(length);
  if (!read_exact(fd, body.data(), length)) throw ProtocolError("truncated frame");
  return body;
}

}  // namespace certgate::engine::ipc
