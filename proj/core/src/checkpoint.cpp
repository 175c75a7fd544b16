#include "tuna/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace tuna {

namespace {

constexpr char kMagic[4] = {'T', 'U', 'N', 'A'};

template <typename T>
void write_le(std::ostream& os, T value) {
    unsigned char bytes[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<uint64_t>(value) >> (8 * i)) & 0xff);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

void write_f64_le(std::ostream& os, double value) {
    uint64_t bits;
    std::memcpy(&bits, &value, sizeof(bits));
    write_le<uint64_t>(os, bits);
}

template <typename T>
T read_le(std::istream& is, const std::filesystem::path& path) {
    unsigned char bytes[sizeof(T)];
    is.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (!is) {
        throw DataError("checkpoint '" + path.string() + "' is truncated");
    }
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<uint64_t>(bytes[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

double read_f64_le(std::istream& is, const std::filesystem::path& path) {
    const uint64_t bits = read_le<uint64_t>(is, path);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& config_text,
                     const std::filesystem::path& path) {
    std::vector<const ParamEntry*> trainable;
    for (const ParamEntry& e : store.entries()) {
        if (e.trainable) {
            trainable.push_back(&e);
        }
    }
    std::sort(trainable.begin(), trainable.end(),
              [](const ParamEntry* a, const ParamEntry* b) { return a->name < b->name; });

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os.write(kMagic, 4);
    write_le<uint32_t>(os, 1);
    write_le<uint64_t>(os, config_text.size());
    os.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_le<uint64_t>(os, store.fingerprint_frozen());
    write_le<uint32_t>(os, static_cast<uint32_t>(trainable.size()));
    for (const ParamEntry* e : trainable) {
        write_le<uint32_t>(os, static_cast<uint32_t>(e->name.size()));
        os.write(e->name.data(), static_cast<std::streamsize>(e->name.size()));
        write_le<uint32_t>(os, static_cast<uint32_t>(e->tensor.rank()));
        for (int64_t d : e->tensor.shape()) {
            write_le<uint64_t>(os, static_cast<uint64_t>(d));
        }
        for (double v : e->tensor.data()) {
            write_f64_le(os, v);
        }
    }
    if (!os) {
        throw IoError("failed while writing '" + path.string() + "'");
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    }
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("'" + path.string() + "' is not a TUNA checkpoint (bad magic)");
    }
    Checkpoint ckpt;
    ckpt.version = read_le<uint32_t>(is, path);
    if (ckpt.version != 1) {
        throw DataError("checkpoint '" + path.string() + "': unsupported version " +
                        std::to_string(ckpt.version));
    }
    const uint64_t config_len = read_le<uint64_t>(is, path);
    ckpt.config_text.resize(config_len);
    is.read(ckpt.config_text.data(), static_cast<std::streamsize>(config_len));
    if (!is) {
        throw DataError("checkpoint '" + path.string() + "' is truncated");
    }
    ckpt.fingerprint = read_le<uint64_t>(is, path);
    const uint32_t count = read_le<uint32_t>(is, path);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_le<uint32_t>(is, path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) {
            throw DataError("checkpoint '" + path.string() + "' is truncated");
        }
        const uint32_t rank = read_le<uint32_t>(is, path);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int64_t>(read_le<uint64_t>(is, path));
        }
        std::vector<double> data(static_cast<size_t>(numel_of(shape)));
        for (double& v : data) {
            v = read_f64_le(is, path);
        }
        ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape),
                                                                     std::move(data)));
    }
    return ckpt;
}

void apply_checkpoint(ParamStore& store, const Checkpoint& ckpt, bool force) {
    if (!force) {
        const uint64_t fp = store.fingerprint_frozen();
        if (fp != ckpt.fingerprint) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%016llx vs %016llx",
                          static_cast<unsigned long long>(ckpt.fingerprint),
                          static_cast<unsigned long long>(fp));
            throw CompatError(std::string("checkpoint backbone fingerprint mismatch (") + buf +
                              ")");
        }
    }
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (!store.contains(name)) {
            throw CompatError("checkpoint tensor '" + name + "' has no matching parameter");
        }
        ParamEntry& e = store.entry(name);
        if (e.tensor.shape() != tensor.shape()) {
            throw CompatError("checkpoint tensor '" + name + "' has shape " +
                              shape_str(tensor.shape()) + ", expected " +
                              shape_str(e.tensor.shape()));
        }
        e.tensor.mutable_data() = tensor.data();
    }
}

size_t apply_matching_tensors(ParamStore& store, const Checkpoint& ckpt) {
    size_t applied = 0;
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (!store.contains(name)) {
            continue;
        }
        ParamEntry& e = store.entry(name);
        if (e.tensor.shape() != tensor.shape()) {
            continue;
        }
        e.tensor.mutable_data() = tensor.data();
        ++applied;
    }
    return applied;
}

}  // namespace tuna
