#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "terracover/layers.hpp"

namespace terra {

enum class HeadKind { kClassification, kSegmentation };
enum class FreezePart { kEncoder, kAllButHead };

// Parameter names carry the graph partition as a prefix: "enc." for the
// shared encoder, "dec." for the U-Net decoder, "head." for the classifier
// head. Encoder names are identical between the classifier and U-Net builds
// so classifier-trained weights load directly.
template <typename Scalar>
class Network {
public:
  struct Node {
    std::string name;
    std::vector<int> inputs;  // producer node ids; -1 is the graph input
    std::unique_ptr<Layer<Scalar>> layer;
    Tensor<Scalar> out;  // activation; its grad buffer is dL/dout
  };

  int add(std::string name, std::unique_ptr<Layer<Scalar>> layer,
          std::vector<int> inputs) {
    static constexpr std::array<const char*, 2> kSuffix = {".w", ".b"};
    const auto params = layer->params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i]->name = name + kSuffix.at(i);
    }
    nodes_.push_back(Node{std::move(name), std::move(inputs), std::move(layer), {}});
    return static_cast<int>(nodes_.size()) - 1;
  }

  HeadKind head = HeadKind::kClassification;

  // Runs every node in insertion (topological) order and returns the final
  // node's activation. Activations stay resident for backward().
  const Tensor<Scalar>& forward(const Tensor<Scalar>& input) {
    input_ = &input;
    for (Node& node : nodes_) {
      try {
        node.out = node.layer->forward(gather(node));
      } catch (const DataError& e) {
        throw DataError(node.name + ": " + e.what());
      }
    }
    return nodes_.back().out;
  }

  // Propagates dL/d(final output) back to every parameter that can reach a
  // trainable parameter. Paths that end only in frozen parameters are
  // skipped, so frozen parameters keep zero gradients.
  void backward(const typename Tensor<Scalar>::Array& loss_grad) {
    if (nodes_.empty() || nodes_.back().out.size() != loss_grad.size()) {
      throw DataError("backward before a matching forward pass");
    }
    const auto alive = alive_mask();
    std::vector<bool> needed(nodes_.size(), false);
    needed.back() = true;

    for (Node& node : nodes_) node.out.zero_grad();
    nodes_.back().out.grad() = loss_grad;

    std::vector<const Tensor<Scalar>*> ins;
    std::vector<Tensor<Scalar>*> gins;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      if (!needed[static_cast<std::size_t>(i)]) continue;
      Node& node = nodes_[static_cast<std::size_t>(i)];
      ins.clear();
      gins.clear();
      for (int input : node.inputs) {
        ins.push_back(input < 0 ? input_ : &nodes_[static_cast<std::size_t>(input)].out);
        if (input >= 0 && alive[static_cast<std::size_t>(input)]) {
          Tensor<Scalar>& producer = nodes_[static_cast<std::size_t>(input)].out;
          producer.grad();  // ensure the buffer exists
          gins.push_back(&producer);
          needed[static_cast<std::size_t>(input)] = true;
        } else {
          gins.push_back(nullptr);
        }
      }
      node.layer->backward(ins, node.out, gins);
    }
  }

  void zero_param_grads() {
    for (Param<Scalar>* param : parameters()) {
      param->value.grad().setZero();
    }
  }

  std::vector<Param<Scalar>*> parameters() {
    std::vector<Param<Scalar>*> out;
    for (Node& node : nodes_) {
      for (Param<Scalar>* param : node.layer->params()) out.push_back(param);
    }
    return out;
  }

  Param<Scalar>* find_param(const std::string& name) {
    for (Param<Scalar>* param : parameters()) {
      if (param->name == name) return param;
    }
    return nullptr;
  }

  Eigen::Index parameter_count() {
    Eigen::Index n = 0;
    for (Param<Scalar>* param : parameters()) n += param->value.size();
    return n;
  }

  void init_params(std::uint64_t seed) {
    Rng rng(seed);
    for (Node& node : nodes_) node.layer->init_params(rng);
  }

  void freeze(FreezePart part) {
    for (Param<Scalar>* param : parameters()) {
      if (part == FreezePart::kEncoder) {
        if (param->name.starts_with("enc.")) param->trainable = false;
      } else {
        if (!param->name.starts_with("head.")) param->trainable = false;
      }
    }
  }

  void unfreeze() {
    for (Param<Scalar>* param : parameters()) param->trainable = true;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }

  const Tensor<Scalar>& activation(const std::string& node_name) const {
    for (const Node& node : nodes_) {
      if (node.name == node_name) return node.out;
    }
    throw DataError("no node named '" + node_name + "'");
  }

private:
  std::vector<const Tensor<Scalar>*> gather(const Node& node) const {
    std::vector<const Tensor<Scalar>*> ins;
    for (int input : node.inputs) {
      ins.push_back(input < 0 ? input_ : &nodes_[static_cast<std::size_t>(input)].out);
    }
    return ins;
  }

  // alive[i]: the subgraph feeding node i contains a trainable parameter,
  // so dL/d(out_i) is worth computing.
  std::vector<bool> alive_mask() {
    std::vector<bool> alive(nodes_.size(), false);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      bool has_trainable = false;
      for (Param<Scalar>* param : nodes_[i].layer->params()) {
        has_trainable |= param->trainable;
      }
      bool upstream = false;
      for (int input : nodes_[i].inputs) {
        if (input >= 0) upstream = upstream || alive[static_cast<std::size_t>(input)];
      }
      alive[i] = has_trainable || upstream;
    }
    return alive;
  }

  std::vector<Node> nodes_;
  const Tensor<Scalar>* input_ = nullptr;
};

// Channel plan of the tiny residual encoder: a stem at full resolution and
// three maxpool+residual stages (120 -> 60 -> 30 -> 15).
struct EncoderSpec {
  int input_channels = 3;
  int stem_channels = 8;
  std::array<int, 3> stage_channels = {16, 32, 48};
  std::uint64_t seed = 0x7e44ac0;
};

namespace detail {

// conv(3x3) -> relu -> conv(3x3) joined with an identity (or 1x1 projection)
// shortcut, then relu. Returns the output node id.
template <typename Scalar>
int append_residual_block(Network<Scalar>& net, const std::string& prefix, int input,
                          int in_channels, int out_channels) {
  int c1 = net.add(prefix + ".conv1",
                   std::make_unique<Conv2d<Scalar>>(in_channels, out_channels, 3),
                   {input});
  int r1 = net.add(prefix + ".relu1", std::make_unique<ReLU<Scalar>>(),
                   std::vector<int>{c1});
  // Zero-initialized: the block starts as its shortcut.
  int c2 = net.add(prefix + ".conv2",
                   std::make_unique<Conv2d<Scalar>>(out_channels, out_channels, 3, 1,
                                                    0.0),
                   {r1});
  int shortcut = input;
  if (in_channels != out_channels) {
    shortcut = net.add(prefix + ".proj",
                       std::make_unique<Conv2d<Scalar>>(in_channels, out_channels, 1),
                       {input});
  }
  int sum = net.add(prefix + ".add", std::make_unique<Add<Scalar>>(),
                    std::vector<int>{c2, shortcut});
  return net.add(prefix + ".relu2", std::make_unique<ReLU<Scalar>>(),
                 std::vector<int>{sum});
}

struct EncoderTaps {
  int stem = -1;    // full resolution
  int stage1 = -1;  // 1/2
  int stage2 = -1;  // 1/4
  int stage3 = -1;  // 1/8 (bottleneck)
};

template <typename Scalar>
EncoderTaps append_encoder(Network<Scalar>& net, const EncoderSpec& spec) {
  EncoderTaps taps;
  int stem_conv = net.add(
      "enc.stem.conv",
      std::make_unique<Conv2d<Scalar>>(spec.input_channels, spec.stem_channels, 3),
      {-1});
  taps.stem = net.add("enc.stem.relu", std::make_unique<ReLU<Scalar>>(),
                      std::vector<int>{stem_conv});

  int tap = taps.stem;
  int channels = spec.stem_channels;
  for (int stage = 0; stage < 3; ++stage) {
    const std::string prefix = "enc.s" + std::to_string(stage + 1);
    int pooled = net.add(prefix + ".pool", std::make_unique<MaxPool2<Scalar>>(),
                         std::vector<int>{tap});
    tap = append_residual_block(net, prefix + ".res", pooled, channels,
                                spec.stage_channels[static_cast<std::size_t>(stage)]);
    channels = spec.stage_channels[static_cast<std::size_t>(stage)];
    if (stage == 0) taps.stage1 = tap;
    if (stage == 1) taps.stage2 = tap;
    if (stage == 2) taps.stage3 = tap;
  }
  return taps;
}

// upsample x2 -> conv -> relu -> concat skip -> conv -> relu.
template <typename Scalar>
int append_up_block(Network<Scalar>& net, const std::string& prefix, int input,
                    int in_channels, int skip_node, int skip_channels,
                    int out_channels) {
  int up = net.add(prefix + ".up", std::make_unique<Upsample2Nearest<Scalar>>(),
                   std::vector<int>{input});
  int c1 = net.add(prefix + ".conv1",
                   std::make_unique<Conv2d<Scalar>>(in_channels, out_channels, 3),
                   {up});
  int r1 = net.add(prefix + ".relu1", std::make_unique<ReLU<Scalar>>(),
                   std::vector<int>{c1});
  int cat = net.add(prefix + ".skip", std::make_unique<ConcatSkip<Scalar>>(),
                    std::vector<int>{r1, skip_node});
  int c2 = net.add(prefix + ".conv2",
                   std::make_unique<Conv2d<Scalar>>(out_channels + skip_channels,
                                                    out_channels, 3),
                   {cat});
  return net.add(prefix + ".relu2", std::make_unique<ReLU<Scalar>>(),
                 std::vector<int>{c2});
}

}  // namespace detail

// Residual encoder + global average pooling + dense head emitting
// `num_classes` multi-label logits.
template <typename Scalar>
Network<Scalar> build_classifier(const EncoderSpec& spec, int num_classes) {
  Network<Scalar> net;
  net.head = HeadKind::kClassification;
  auto taps = detail::append_encoder(net, spec);
  int pooled = net.add("head.gap", std::make_unique<GlobalAvgPool<Scalar>>(),
                       std::vector<int>{taps.stage3});
  net.add("head.fc",
          std::make_unique<Dense<Scalar>>(spec.stage_channels[2], num_classes),
          {pooled});
  net.init_params(spec.seed);
  return net;
}

// The same encoder mirrored by three upsample stages with skip
// concatenations, ending in a 1x1 conv of per-pixel class logits.
template <typename Scalar>
Network<Scalar> build_unet(const EncoderSpec& spec, int num_classes) {
  Network<Scalar> net;
  net.head = HeadKind::kSegmentation;
  auto taps = detail::append_encoder(net, spec);
  int u1 = detail::append_up_block(net, "dec.u1", taps.stage3, spec.stage_channels[2],
                                   taps.stage2, spec.stage_channels[1],
                                   spec.stage_channels[1]);
  int u2 = detail::append_up_block(net, "dec.u2", u1, spec.stage_channels[1],
                                   taps.stage1, spec.stage_channels[0],
                                   spec.stage_channels[0]);
  int u3 = detail::append_up_block(net, "dec.u3", u2, spec.stage_channels[0],
                                   taps.stem, spec.stem_channels, spec.stem_channels);
  net.add("dec.out", std::make_unique<Conv2d<Scalar>>(spec.stem_channels, num_classes, 1),
          {u3});
  net.init_params(spec.seed);
  return net;
}

// --- Checkpoint format -----------------------------------------------------
// magic "LCUN", version u16, record count u32, then per parameter:
// name length u16 + UTF-8 name, rank u8, extents u32 each, float32 payload.
// All integers and floats little-endian.

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'L', 'C', 'U', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, Network<Scalar>& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());

  const auto params = net.parameters();
  out.write(kCheckpointMagic, 4);
  const std::uint16_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), 2);
  const auto count = static_cast<std::uint32_t>(params.size());
  out.write(reinterpret_cast<const char*>(&count), 4);

  for (Param<Scalar>* param : params) {
    const auto name_len = static_cast<std::uint16_t>(param->name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(param->name.data(), name_len);
    const auto rank = static_cast<std::uint8_t>(param->value.rank());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (Eigen::Index d : param->value.shape()) {
      const auto extent = static_cast<std::uint32_t>(d);
      out.write(reinterpret_cast<const char*>(&extent), 4);
    }
    for (Eigen::Index i = 0; i < param->value.size(); ++i) {
      const float v = static_cast<float>(param->value.values()[i]);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!out) throw DataError("short write to checkpoint: " + path.string());
}

struct CheckpointRecord {
  std::vector<Eigen::Index> shape;
  std::vector<float> values;
};

inline std::map<std::string, CheckpointRecord> read_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());

  const auto fail = [&](const std::string& what) -> DataError {
    return DataError("checkpoint " + path.string() + ": " + what);
  };

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw fail("bad magic");
  std::uint16_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 2);
  if (version != kCheckpointVersion) {
    throw fail("unsupported version " + std::to_string(version));
  }
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);

  std::map<std::string, CheckpointRecord> records;
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint16_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 2);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint8_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 1);

    CheckpointRecord record;
    std::size_t total = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t extent = 0;
      in.read(reinterpret_cast<char*>(&extent), 4);
      record.shape.push_back(static_cast<Eigen::Index>(extent));
      total *= extent;
    }
    record.values.resize(total);
    in.read(reinterpret_cast<char*>(record.values.data()),
            static_cast<std::streamsize>(total * 4));
    if (!in) throw fail("truncated record '" + name + "'");
    records.emplace(std::move(name), std::move(record));
  }
  return records;
}

// Copies checkpoint tensors into same-named parameters. `prefix` restricts
// the load (e.g. "enc." for encoder transfer); every selected parameter must
// be present with a matching shape.
template <typename Scalar>
int load_checkpoint(const std::filesystem::path& path, Network<Scalar>& net,
                    const std::string& prefix = "") {
  const auto records = read_checkpoint(path);
  int loaded = 0;
  for (Param<Scalar>* param : net.parameters()) {
    if (!param->name.starts_with(prefix)) continue;
    const auto it = records.find(param->name);
    if (it == records.end()) {
      throw DataError("checkpoint " + path.string() + " has no parameter '" +
                      param->name + "'");
    }
    if (it->second.shape != param->value.shape()) {
      throw DataError("checkpoint parameter '" + param->name + "' has shape " +
                      shape_string(it->second.shape) + ", expected " +
                      shape_string(param->value.shape()));
    }
    for (Eigen::Index i = 0; i < param->value.size(); ++i) {
      param->value.values()[i] =
          static_cast<Scalar>(it->second.values[static_cast<std::size_t>(i)]);
    }
    ++loaded;
  }
  if (loaded == 0) throw DataError("no parameters matched prefix '" + prefix + "'");
  return loaded;
}

}  // namespace terra
