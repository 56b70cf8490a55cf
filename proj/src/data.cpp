#include "lowp/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>

namespace lowp {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803u;
constexpr std::uint32_t kLabelsMagic = 0x00000801u;

// gzread handles plain files as well as gzip streams.
std::vector<std::uint8_t> read_file(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr) throw IdxError("cannot open " + path);
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) {
        out.insert(out.end(), buf, buf + n);
    }
    const bool read_error = n < 0;
    gzclose(f);
    if (read_error) throw IdxError("read error in " + path);
    return out;
}

struct Cursor {
    const std::vector<std::uint8_t>& bytes;
    const std::string& path;
    std::size_t pos = 0;

    std::uint32_t read_u32_be() {
        if (pos + 4 > bytes.size()) {
            throw IdxError("truncated IDX header in " + path + " (file has " +
                           std::to_string(bytes.size()) + " bytes)");
        }
        std::uint32_t v = (std::uint32_t(bytes[pos]) << 24) | (std::uint32_t(bytes[pos + 1]) << 16) |
                          (std::uint32_t(bytes[pos + 2]) << 8) | std::uint32_t(bytes[pos + 3]);
        pos += 4;
        return v;
    }

    void expect_payload(std::size_t count) const {
        if (bytes.size() - pos != count) {
            throw IdxError("truncated IDX payload in " + path + ": expected " +
                           std::to_string(count) + " bytes, found " +
                           std::to_string(bytes.size() - pos));
        }
    }
};

std::string hex_u32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

std::string find_idx_file(const std::string& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    for (const char* suffix : {"", ".gz"}) {
        const fs::path p = fs::path(dir) / (stem + suffix);
        if (fs::exists(p)) return p.string();
    }
    throw IdxError("no " + stem + "[.gz] under " + dir);
}

}  // namespace

Tensor load_idx_images(const std::string& path) {
    const auto bytes = read_file(path);
    Cursor c{bytes, path};
    const std::uint32_t magic = c.read_u32_be();
    if (magic != kImagesMagic) {
        throw IdxError("bad image magic " + hex_u32(magic) + " in " + path +
                       " (expected " + hex_u32(kImagesMagic) + ")");
    }
    const std::size_t n = c.read_u32_be();
    const std::size_t rows = c.read_u32_be();
    const std::size_t cols = c.read_u32_be();
    c.expect_payload(n * rows * cols);

    Tensor images({n, rows, cols});
    for (std::size_t i = 0; i < images.size(); ++i) {
        images.data[i] = static_cast<float>(bytes[c.pos + i]) / 255.0f;
    }
    return images;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
    const auto bytes = read_file(path);
    Cursor c{bytes, path};
    const std::uint32_t magic = c.read_u32_be();
    if (magic != kLabelsMagic) {
        throw IdxError("bad label magic " + hex_u32(magic) + " in " + path +
                       " (expected " + hex_u32(kLabelsMagic) + ")");
    }
    const std::size_t n = c.read_u32_be();
    c.expect_payload(n);

    std::vector<std::uint8_t> labels(bytes.begin() + c.pos, bytes.end());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 9) {
            throw IdxError("label " + std::to_string(int(labels[i])) + " out of range at index " +
                           std::to_string(i) + " in " + path);
        }
    }
    return labels;
}

Dataset load_mnist_split(const std::string& dir, const std::string& split) {
    if (split != "train" && split != "test") {
        throw std::invalid_argument("unknown split '" + split + "' (train|test)");
    }
    const std::string stem = (split == "train") ? "train" : "t10k";
    Dataset ds;
    ds.images = load_idx_images(find_idx_file(dir, stem + "-images-idx3-ubyte"));
    ds.labels = load_idx_labels(find_idx_file(dir, stem + "-labels-idx1-ubyte"));
    ds.split = split;
    if (ds.images.shape[0] != ds.labels.size()) {
        throw IdxError(split + ": " + std::to_string(ds.images.shape[0]) + " images but " +
                       std::to_string(ds.labels.size()) + " labels");
    }
    return ds;
}

Dataset Dataset::subset(std::size_t n) const {
    n = std::min(n, size());
    Dataset out;
    out.split = split;
    const std::size_t rows = images.shape[1], cols = images.shape[2];
    out.images = Tensor({n, rows, cols});
    std::copy_n(images.data.begin(), n * rows * cols, out.images.data.begin());
    out.labels.assign(labels.begin(), labels.begin() + n);
    return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::size_t epoch) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(Rng::derive(seed, 0x5AFF1E00ULL + epoch));
    for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
        const std::size_t j = rng.next_below(i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

Batch gather_batch(const Dataset& ds, const std::vector<std::size_t>& perm,
                   std::size_t first, std::size_t count, std::size_t classes) {
    const std::size_t rows = ds.images.shape[1], cols = ds.images.shape[2];
    Batch b{Tensor({count, rows, cols}), Tensor({count, classes})};
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = perm[first + i];
        std::copy_n(ds.images.data.begin() + src * rows * cols, rows * cols,
                    b.images.data.begin() + i * rows * cols);
        b.targets.at(i, ds.labels[src]) = 1.0f;
    }
    return b;
}

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size,
                           std::uint64_t seed, std::size_t epoch) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    const auto perm = epoch_permutation(ds.size(), seed, epoch);
    std::vector<Batch> out;
    for (std::size_t first = 0; first < ds.size(); first += batch_size) {
        const std::size_t count = std::min(batch_size, ds.size() - first);
        out.push_back(gather_batch(ds, perm, first, count));
    }
    return out;
}

}  // namespace lowp
