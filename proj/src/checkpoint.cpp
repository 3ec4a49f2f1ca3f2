#include "fogseg/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace fogseg {

namespace {

constexpr char kMagic[8] = {'F', 'O', 'G', 'S', 'E', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"variant", variant_name(c.variant)},
            {"num_stages", c.num_stages},
            {"layers_per_stage", c.layers_per_stage},
            {"channels", c.channels},
            {"kernel", c.kernel},
            {"num_classes", c.num_classes},
            {"in_channels", c.in_channels}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.num_stages = j.at("num_stages").get<int>();
    c.layers_per_stage = j.at("layers_per_stage").get<int>();
    c.channels = j.at("channels").get<int>();
    c.kernel = j.at("kernel").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    return c;
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
void read_pod(std::istream& in, T& v, const std::string& path) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw ValidationError(path + ": truncated checkpoint");
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json header;
    header["config"] = config_to_json(ck.config);
    header["graph"] = nlohmann::json::parse(graph_to_json(ck.graph));
    header["graph_hash"] = graph_hash(ck.graph);
    header["scalar_bytes"] = static_cast<int>(sizeof(real_t));
    auto& table = header["params"] = nlohmann::json::array();
    for (const auto& e : ck.params.entries) {
        std::vector<int> dims;
        for (int i = 0; i < e.array.shape.rank(); ++i) dims.push_back(e.array.shape[i]);
        table.push_back(
            {{"name", e.name}, {"shape", dims}, {"tracked", e.array.tracked}});
    }
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint64_t>(htext.size()));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& e : ck.params.entries)
        out.write(reinterpret_cast<const char*>(e.array.value.data()),
                  static_cast<std::streamsize>(e.array.value.size() * sizeof(real_t)));
    if (!out) throw ValidationError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);

    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ValidationError(path + ": not a checkpoint file");
    std::uint32_t version;
    read_pod(in, version, path);
    if (version != kVersion)
        throw ValidationError(path + ": unsupported checkpoint version " +
                              std::to_string(version));
    std::uint64_t hlen;
    read_pod(in, hlen, path);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ValidationError(path + ": truncated checkpoint header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": bad header: " + e.what());
    }

    Checkpoint ck;
    try {
        ck.config = config_from_json(header.at("config"));
        ck.graph = graph_from_json(header.at("graph").dump());
        if (header.at("scalar_bytes").get<int>() != static_cast<int>(sizeof(real_t)))
            throw ValidationError(path + ": checkpoint stores " +
                                  std::to_string(header.at("scalar_bytes").get<int>()) +
                                  "-byte scalars, this build uses " +
                                  std::to_string(sizeof(real_t)));
        if (header.at("graph_hash").get<std::uint64_t>() != graph_hash(ck.graph))
            throw ValidationError(path + ": graph hash mismatch");

        // rebuild the layout, then require the file to describe it exactly
        ck.params = build_param_layout(ck.config, ck.graph.num_nodes());
        const auto& table = header.at("params");
        if (table.size() != ck.params.entries.size())
            throw ValidationError(path + ": parameter table has " +
                                  std::to_string(table.size()) + " entries, expected " +
                                  std::to_string(ck.params.entries.size()));
        for (std::size_t i = 0; i < table.size(); ++i) {
            auto& e = ck.params.entries[i];
            const auto& row = table[i];
            if (row.at("name").get<std::string>() != e.name)
                throw ValidationError(path + ": parameter " + std::to_string(i) + " is '" +
                                      row.at("name").get<std::string>() + "', expected '" +
                                      e.name + "'");
            const auto dims = row.at("shape").get<std::vector<int>>();
            if (Shape(dims) != e.array.shape)
                throw ValidationError(path + ": parameter '" + e.name + "' has shape " +
                                      Shape(dims).str() + ", expected " + e.array.shape.str());
            in.read(reinterpret_cast<char*>(e.array.value.data()),
                    static_cast<std::streamsize>(e.array.value.size() * sizeof(real_t)));
            if (!in) throw ValidationError(path + ": truncated parameter data at '" + e.name + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": bad header: " + e.what());
    }
    return ck;
}

}  // namespace fogseg
