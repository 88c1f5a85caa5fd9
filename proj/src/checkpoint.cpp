#include "dclsnet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dclsnet {

std::string spec_hash(const ModelSpec& spec) {
    // FNV-1a over the canonical spec text
    const std::string s = spec.serialize();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

void save_checkpoint(const Model& model, const std::string& path,
                     const std::string& extra_meta) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
    std::ostringstream hdr;
    hdr << "DCLSNET-CKPT v1\n";
    hdr << "meta.format_version: 1\n";
    hdr << "meta.spec_hash: " << spec_hash(model.spec) << "\n";
    if (!extra_meta.empty()) hdr << extra_meta;
    std::istringstream spec_lines(model.spec.serialize());
    std::string line;
    while (std::getline(spec_lines, line)) hdr << "spec." << line << "\n";
    std::size_t offset = 0;
    for (const auto& p : model.params) {
        if (!p.active) continue;
        const std::size_t bytes = p.value.numel() * sizeof(float);
        hdr << "array: " << p.name << " " << shape_to_string(p.value.shape) << " " << offset
            << " " << bytes << "\n";
        offset += bytes;
    }
    hdr << "END-HEADER\n";
    const std::string h = hdr.str();
    f.write(h.data(), (std::streamsize)h.size());
    for (const auto& p : model.params) {
        if (!p.active) continue;
        f.write(reinterpret_cast<const char*>(p.value.data.data()),
                (std::streamsize)(p.value.numel() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("short write to checkpoint: " + path);
}

namespace {

Shape parse_shape(const std::string& s) {
    Shape shape;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, 'x')) shape.push_back((std::size_t)std::stoull(tok));
    return shape;
}

}  // namespace

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "DCLSNET-CKPT v1")
        throw std::runtime_error("corrupt checkpoint container: bad magic in " + path);

    std::map<std::string, std::string> meta, spec_kv;
    struct ArrayEntry {
        Shape shape;
        std::size_t offset, bytes;
    };
    std::map<std::string, ArrayEntry> arrays;
    bool header_done = false;
    while (std::getline(f, line)) {
        if (line == "END-HEADER") {
            header_done = true;
            break;
        }
        if (line.rfind("array: ", 0) == 0) {
            std::istringstream ls(line.substr(7));
            std::string name, shape_s;
            std::size_t offset, bytes;
            if (!(ls >> name >> shape_s >> offset >> bytes))
                throw std::runtime_error("corrupt checkpoint container: bad array line");
            arrays[name] = {parse_shape(shape_s), offset, bytes};
            continue;
        }
        const auto colon = line.find(": ");
        if (colon == std::string::npos)
            throw std::runtime_error("corrupt checkpoint container: bad header line '" + line + "'");
        const std::string key = line.substr(0, colon);
        const std::string value = line.substr(colon + 2);
        if (key.rfind("spec.", 0) == 0)
            spec_kv[key.substr(5)] = value;
        else
            meta[key] = value;
    }
    if (!header_done)
        throw std::runtime_error("corrupt checkpoint container: missing END-HEADER in " + path);
    auto ver = meta.find("meta.format_version");
    if (ver == meta.end() || ver->second != "1")
        throw std::runtime_error("checkpoint version mismatch: want format 1, got " +
                                 (ver == meta.end() ? std::string("<none>") : ver->second));

    ModelSpec spec = ModelSpec::parse(spec_kv);
    auto hash = meta.find("meta.spec_hash");
    if (hash == meta.end() || hash->second != spec_hash(spec))
        throw std::runtime_error("corrupt checkpoint container: spec hash mismatch");

    const std::streampos payload_start = f.tellg();
    f.seekg(0, std::ios::end);
    const std::size_t payload_size = (std::size_t)(f.tellg() - payload_start);

    std::mt19937 rng(0);
    Model model = build_model<float>(spec, rng);
    for (auto& p : model.params) {
        if (!p.active) continue;
        auto it = arrays.find(p.name);
        if (it == arrays.end())
            throw std::runtime_error("checkpoint missing array: " + p.name);
        const auto& a = it->second;
        if (a.shape != p.value.shape)
            throw std::runtime_error("checkpoint array shape mismatch for " + p.name + ": file " +
                                     shape_to_string(a.shape) + " vs model " +
                                     shape_to_string(p.value.shape));
        if (a.bytes != p.value.numel() * sizeof(float) ||
            a.offset + a.bytes > payload_size)
            throw std::runtime_error("corrupt checkpoint container: truncated payload for " +
                                     p.name);
        f.seekg(payload_start + (std::streamoff)a.offset);
        f.read(reinterpret_cast<char*>(p.value.data.data()), (std::streamsize)a.bytes);
        if (!f) throw std::runtime_error("corrupt checkpoint container: short read for " + p.name);
    }
    return model;
}

void save_array_container(const std::string& path,
                          const std::vector<std::pair<std::string, Tensor>>& arrays) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write container: " + path);
    std::ostringstream hdr;
    hdr << "DCLSNET-CKPT v1\n";
    hdr << "meta.format_version: 1\n";
    std::size_t offset = 0;
    for (const auto& [name, t] : arrays) {
        const std::size_t bytes = t.numel() * sizeof(float);
        hdr << "array: " << name << " " << shape_to_string(t.shape) << " " << offset << " "
            << bytes << "\n";
        offset += bytes;
    }
    hdr << "END-HEADER\n";
    const std::string h = hdr.str();
    f.write(h.data(), (std::streamsize)h.size());
    for (const auto& [name, t] : arrays)
        f.write(reinterpret_cast<const char*>(t.data.data()),
                (std::streamsize)(t.numel() * sizeof(float)));
    if (!f) throw std::runtime_error("short write to container: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_array_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open container: " + path);
    std::string line;
    if (!std::getline(f, line) || line != "DCLSNET-CKPT v1")
        throw std::runtime_error("corrupt container: bad magic in " + path);
    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset, bytes;
    };
    std::vector<Entry> entries;
    bool header_done = false;
    while (std::getline(f, line)) {
        if (line == "END-HEADER") {
            header_done = true;
            break;
        }
        if (line.rfind("array: ", 0) == 0) {
            std::istringstream ls(line.substr(7));
            Entry e;
            std::string shape_s;
            if (!(ls >> e.name >> shape_s >> e.offset >> e.bytes))
                throw std::runtime_error("corrupt container: bad array line");
            e.shape = parse_shape(shape_s);
            entries.push_back(std::move(e));
        }
    }
    if (!header_done) throw std::runtime_error("corrupt container: missing END-HEADER");
    const std::streampos payload_start = f.tellg();
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& e : entries) {
        Tensor t(e.shape);
        if (e.bytes != t.numel() * sizeof(float))
            throw std::runtime_error("corrupt container: size mismatch for " + e.name);
        f.seekg(payload_start + (std::streamoff)e.offset);
        f.read(reinterpret_cast<char*>(t.data.data()), (std::streamsize)e.bytes);
        if (!f) throw std::runtime_error("corrupt container: short read for " + e.name);
        out.emplace_back(e.name, std::move(t));
    }
    return out;
}

}  // namespace dclsnet
