#pragma once

// A bare simulated endpoint that speaks the wire protocol by hand, for
// poking a real node with arbitrary frames.

#include <map>

#include "dscoop/errors.hpp"
#include "dscoop/simnet.hpp"

namespace dscoop::testpeer {

class RawPeer final : public TransportListener {
 public:
  RawPeer(SimNetwork& net, NodeId id) : net_(net), ep_(net.attach(id)), id_(id) { ep_.bind(this); }

  NodeId id() const noexcept { return id_; }

  /// Dials the node; returns false if the dial failed.
  bool dial(NodeId to) {
    bool ok = false;
    ep_.dial(SimNetwork::address_of(to), [&](std::optional<LinkId> l, std::string) {
      if (l) link_ = *l;
      ok = l.has_value();
    });
    net_.run_until_quiescent();
    to_ = to;
    return ok;
  }

  /// Sends a request and runs the network; returns the reply if one came.
  std::optional<ReplyMessage> request(RequestMessage msg, NodeId dest = {}) {
    const MessageId mid = next_id_++;
    send(Envelope{mid, id_, dest.value ? dest : to_, std::move(msg)});
    net_.run_until_quiescent();
    return take(mid);
  }

  MessageId send(Envelope env) {
    ep_.send(link_, encode(env));
    return env.message_id;
  }
  void send_raw(Bytes frame) { ep_.send(link_, std::move(frame)); }
  MessageId next_id() { return next_id_++; }

  std::optional<ReplyMessage> take(MessageId mid) {
    auto it = replies_.find(mid);
    if (it == replies_.end()) return std::nullopt;
    auto r = std::move(it->second);
    replies_.erase(it);
    return r;
  }

  std::size_t reply_count() const noexcept { return total_replies_; }
  bool link_down() const noexcept { return down_; }

  bool hello(std::uint64_t version = kProtocolVersion) {
    RequestMessage h;
    h.subject = Subject::Hello;
    h.args = {Value::nat(version)};
    const MessageId mid = next_id_++;
    send(Envelope{mid, id_, NodeId{0}, std::move(h)});
    net_.run_until_quiescent();
    last_hello_ = take(mid);
    return last_hello_ && last_hello_->is_ok();
  }
  const std::optional<ReplyMessage>& last_hello() const { return last_hello_; }

  void on_link_up(LinkId l) override { link_ = l; }
  void on_frame(LinkId, Bytes frame) override {
    Envelope e = decode(frame);
    if (e.kind() == MessageKind::Reply) {
      ++total_replies_;
      replies_[e.message_id] = std::move(e.reply());
    }
  }
  void on_link_down(LinkId) override { down_ = true; }

 private:
  SimNetwork& net_;
  SimEndpoint& ep_;
  NodeId id_;
  NodeId to_;
  LinkId link_ = 0;
  MessageId next_id_ = 1;
  std::map<MessageId, ReplyMessage> replies_;
  std::optional<ReplyMessage> last_hello_;
  std::size_t total_replies_ = 0;
  bool down_ = false;
};

inline Errc fail_code(const ReplyMessage& r) {
  return r.results.empty() ? Errc::RemoteFailure : errc_from_name(r.results[0].as_text());
}

inline RequestMessage request(Subject s, std::vector<ObjectRef> targets = {}, Values args = {}) {
  RequestMessage m;
  m.subject = s;
  m.client_process = ProcessId{1};
  m.targets = std::move(targets);
  m.args = std::move(args);
  return m;
}

}  // namespace dscoop::testpeer
