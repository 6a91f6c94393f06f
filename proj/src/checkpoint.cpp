#include "relsar/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "relsar/config_io.hpp"

using nlohmann::json;

namespace relsar {

namespace {
constexpr char kMagic[8] = {'R', 'L', 'S', 'A', 'R', 'C', 'K', '1'};

json tensor_dir(const std::vector<std::string>& order, const std::map<std::string, Tensor>& tensors,
                uint64_t& offset) {
    json list = json::array();
    for (const auto& name : order) {
        const Tensor& t = tensors.at(name);
        json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = offset;
        offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
        list.push_back(std::move(e));
    }
    return list;
}

void read_tensors(const json& list, const std::vector<char>& blob, std::vector<std::string>& order,
                  std::map<std::string, Tensor>& out) {
    for (const auto& e : list) {
        const std::string name = e.at("name").get<std::string>();
        Shape shape = e.at("shape").get<Shape>();
        const uint64_t off = e.at("offset").get<uint64_t>();
        Tensor t(shape);
        const uint64_t bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
        if (off + bytes > blob.size()) throw CheckpointError("tensor '" + name + "' extends past data blob");
        std::memcpy(t.data.data(), blob.data() + off, bytes);
        order.push_back(name);
        out.emplace(name, std::move(t));
    }
}
} // namespace

ParamSet& Checkpoint::section(const std::string& name) {
    auto it = sections.find(name);
    if (it == sections.end()) throw CheckpointError("checkpoint has no section '" + name + "'");
    return it->second;
}

const ParamSet& Checkpoint::section(const std::string& name) const {
    auto it = sections.find(name);
    if (it == sections.end()) throw CheckpointError("checkpoint has no section '" + name + "'");
    return it->second;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json header;
    header["format_version"] = 1;
    header["encoder"] = to_json(ckpt.encoder);
    header["heads"] = to_json(ckpt.heads);
    header["meta"] = ckpt.meta;
    uint64_t offset = 0;
    json sections = json::object();
    for (const auto& [name, set] : ckpt.sections) {
        json s;
        s["params"] = tensor_dir(set.order, set.tensors, offset);
        s["buffers"] = tensor_dir(set.buffer_order, set.buffers, offset);
        sections[name] = std::move(s);
    }
    header["sections"] = std::move(sections);

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    const uint64_t hlen = header_str.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, set] : ckpt.sections) {
        for (const auto& pname : set.order) {
            const Tensor& t = set.at(pname);
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        }
        for (const auto& bname : set.buffer_order) {
            const Tensor& t = set.buffer(bname);
            out.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        }
    }
    if (!out) throw CheckpointError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("'" + path + "' is not a relsar checkpoint");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw CheckpointError("truncated checkpoint header in '" + path + "'");
    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("checkpoint header parse error: ") + e.what());
    }
    if (header.at("format_version").get<int>() != 1)
        throw CheckpointError("unsupported checkpoint version in '" + path + "'");

    std::vector<char> blob(std::istreambuf_iterator<char>(in), {});
    Checkpoint ckpt;
    ckpt.encoder = encoder_config_from_json(header.at("encoder"));
    ckpt.heads = head_config_from_json(header.at("heads"));
    ckpt.meta = header.value("meta", json::object());
    for (auto it = header.at("sections").begin(); it != header.at("sections").end(); ++it) {
        ParamSet set;
        read_tensors(it.value().at("params"), blob, set.order, set.tensors);
        read_tensors(it.value().at("buffers"), blob, set.buffer_order, set.buffers);
        ckpt.sections.emplace(it.key(), std::move(set));
    }
    return ckpt;
}

} // namespace relsar
