#include "nvs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nvs {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");

namespace {

template <typename S>
const char* dtype_name() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

}  // namespace

template <typename S>
void write_checkpoint(const std::string& path, const Checkpoint<S>& ckpt) {
  std::ostringstream header;
  header << "nvs-checkpoint 1\n";
  header << "dtype " << dtype_name<S>() << "\n";
  for (const auto& [k, v] : ckpt.meta) header << "meta " << k << " " << v << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    header << "tensor " << name << " " << offset << " " << t.shape.size();
    for (std::size_t d : t.shape) header << " " << d;
    header << "\n";
    offset += t.size() * sizeof(S);
  }
  header << "payload " << offset << "\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : ckpt.tensors)
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.size() * sizeof(S)));
  if (!out) throw IoError("short write to " + path);
}

template <typename S>
Checkpoint<S> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "nvs-checkpoint 1")
    throw ParseError(path + ": not a checkpoint file");
  std::string dtype;
  Checkpoint<S> ckpt;
  struct Entry {
    std::string name;
    std::size_t offset;
    Shape shape;
  };
  std::vector<Entry> manifest;
  std::size_t payload_bytes = 0;
  bool saw_payload = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "dtype") {
      ls >> dtype;
    } else if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      ckpt.meta.emplace_back(key, value);
    } else if (tag == "tensor") {
      Entry e;
      std::size_t rank = 0;
      ls >> e.name >> e.offset >> rank;
      e.shape.resize(rank);
      for (std::size_t i = 0; i < rank; ++i) ls >> e.shape[i];
      if (ls.fail()) throw ParseError(path + ": malformed tensor manifest line: " + line);
      manifest.push_back(std::move(e));
    } else if (tag == "payload") {
      ls >> payload_bytes;
      saw_payload = true;
      break;
    } else {
      throw ParseError(path + ": unknown header line: " + line);
    }
  }
  if (!saw_payload) throw ParseError(path + ": truncated header");
  if (dtype != "f32" && dtype != "f64") throw ParseError(path + ": unknown dtype " + dtype);
  std::size_t scalar = dtype == "f32" ? 4 : 8;
  std::vector<char> payload(payload_bytes);
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (static_cast<std::size_t>(in.gcount()) != payload_bytes)
    throw IoError("truncated checkpoint payload in " + path);
  for (const Entry& e : manifest) {
    std::size_t count = shape_size(e.shape);
    if (e.offset + count * scalar > payload_bytes)
      throw ParseError(path + ": tensor " + e.name + " extends past payload");
    Tensor<S> t(e.shape);
    if (scalar == sizeof(S)) {
      std::memcpy(t.data.data(), payload.data() + e.offset, count * sizeof(S));
    } else if (scalar == 4) {
      const float* src = reinterpret_cast<const float*>(payload.data() + e.offset);
      for (std::size_t i = 0; i < count; ++i) t.data[i] = static_cast<S>(src[i]);
    } else {
      const double* src = reinterpret_cast<const double*>(payload.data() + e.offset);
      for (std::size_t i = 0; i < count; ++i) t.data[i] = static_cast<S>(src[i]);
    }
    ckpt.tensors.emplace_back(e.name, std::move(t));
  }
  return ckpt;
}

template <typename S>
void append_weight_tensors(Checkpoint<S>& ckpt, ModelWeights<S>& weights) {
  for (const auto& p : weights.params()) ckpt.tensors.emplace_back(p.name, *p.tensor);
}

template <typename S>
ModelWeights<S> weights_from_checkpoint(const Checkpoint<S>& ckpt, const ModelConfig& config) {
  ModelWeights<S> w = init_weights<S>(config, 0);
  for (const auto& p : w.params()) {
    const Tensor<S>* t = ckpt.find_tensor(p.name);
    if (!t) throw ParseError("checkpoint: missing tensor " + p.name);
    if (t->shape != p.tensor->shape)
      throw ParseError("checkpoint: tensor " + p.name + " has shape " + shape_str(t->shape) +
                       ", expected " + shape_str(p.tensor->shape));
    p.tensor->data = t->data;
    p.tensor->grad.clear();
  }
  return w;
}

template void write_checkpoint<float>(const std::string&, const Checkpoint<float>&);
template void write_checkpoint<double>(const std::string&, const Checkpoint<double>&);
template Checkpoint<float> read_checkpoint<float>(const std::string&);
template Checkpoint<double> read_checkpoint<double>(const std::string&);
template void append_weight_tensors<float>(Checkpoint<float>&, ModelWeights<float>&);
template void append_weight_tensors<double>(Checkpoint<double>&, ModelWeights<double>&);
template ModelWeights<float> weights_from_checkpoint<float>(const Checkpoint<float>&,
                                                            const ModelConfig&);
template ModelWeights<double> weights_from_checkpoint<double>(const Checkpoint<double>&,
                                                              const ModelConfig&);

}  // namespace nvs
