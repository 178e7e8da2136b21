#include <weakloc/synthdata.hpp>

#include <weakloc/binary_io.hpp>
#include <weakloc/rng.hpp>

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace weakloc::synth
{

namespace fs = std::filesystem;

void SynthConfig::validate() const
{
    if (image_side < 8 || image_side > 1024) {
        throw Error("image_side must be in [8, 1024], got " + std::to_string(image_side));
    }
    if (channels != 3) {
        throw Error("channels must be 3, got " + std::to_string(channels));
    }
    if (!(lesion_probability >= 0.0 && lesion_probability <= 1.0)) {
        throw Error("lesion_probability must lie in [0,1]");
    }
    const auto [lmin, lmax] = lesion_radius_range;
    if (!(lmin > 0.0 && lmin <= lmax && lmax < 0.5)) {
        throw Error("lesion_radius_range must satisfy 0 < min <= max < 0.5");
    }
    const auto [gmin, gmax] = gland_radius_range;
    if (!(gmin > 0.0 && gmin <= gmax && gmax < 0.5)) {
        throw Error("gland_radius_range must satisfy 0 < min <= max < 0.5");
    }
    if (lmax > gmin) {
        throw Error("lesion cannot fit inside gland: max lesion radius " + std::to_string(lmax)
                    + " exceeds min gland radius " + std::to_string(gmin));
    }
    if (!(noise_std >= 0.0)) {
        throw Error("noise_std must be non-negative");
    }
}

std::string split_name(Split s)
{
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::holdout:
        return "holdout";
    }
    return "unknown";
}

namespace
{

double quantize(double v)
{
    return static_cast<double>(static_cast<float>(v));
}

struct Draw {
    GlandGeometry gland;
    bool lesion;
    double lx, ly, a, b, theta;
};

// All random draws for a sample, in a fixed order; noise comes after.
Draw draw_geometry(const SynthConfig &c, Rng &rng)
{
    const double S = static_cast<double>(c.image_side);
    Draw d{};
    d.gland.cx = S / 2 + rng.uniform(-0.05, 0.05) * S;
    d.gland.cy = S / 2 + rng.uniform(-0.05, 0.05) * S;
    d.gland.radius = rng.uniform(c.gland_radius_range[0], c.gland_radius_range[1]) * S;
    d.lesion = rng.bernoulli(c.lesion_probability);
    d.a = rng.uniform(c.lesion_radius_range[0], c.lesion_radius_range[1]) * S;
    d.b = rng.uniform(c.lesion_radius_range[0], c.lesion_radius_range[1]) * S;
    d.theta = rng.uniform(0.0, std::numbers::pi);
    const double room = std::max(0.0, d.gland.radius - std::max(d.a, d.b));
    const double r = std::sqrt(rng.uniform()) * room;
    const double phi = rng.uniform(0.0, 2 * std::numbers::pi);
    d.lx = d.gland.cx + r * std::cos(phi);
    d.ly = d.gland.cy + r * std::sin(phi);
    return d;
}

} // namespace

GlandGeometry gland_geometry(const SynthConfig &config, std::uint64_t seed)
{
    Rng rng(seed);
    return draw_geometry(config, rng).gland;
}

Sample render_sample(const SynthConfig &config, std::uint64_t seed, std::string id)
{
    config.validate();
    Rng rng(seed);
    const auto d = draw_geometry(config, rng);
    const std::size_t S = config.image_side;
    const std::size_t C = config.channels;

    Mask gland(S, S);
    Mask lesion(S, S);
    const double ct = std::cos(d.theta);
    const double st = std::sin(d.theta);
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            const double px = static_cast<double>(x) + 0.5;
            const double py = static_cast<double>(y) + 0.5;
            const double gx = px - d.gland.cx;
            const double gy = py - d.gland.cy;
            const bool in_gland = gx * gx + gy * gy <= d.gland.radius * d.gland.radius;
            gland.set(y, x, in_gland);
            if (d.lesion && in_gland) {
                const double dx = px - d.lx;
                const double dy = py - d.ly;
                const double u = (dx * ct + dy * st) / d.a;
                const double v = (-dx * st + dy * ct) / d.b;
                lesion.set(y, x, u * u + v * v <= 1.0);
            }
        }
    }

    Sample s;
    s.id = std::move(id);
    s.image = Tensor::zeros({C, S, S});
    auto img = s.image.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < S * S; ++i) {
            double v = std::clamp(background_level + rng.normal(0.0, config.noise_std), 0.0, 1.0);
            if (gland.bits[i] != 0) {
                v += gland_contrast;
            }
            if (lesion.bits[i] != 0) {
                v += lesion_contrast[c];
            }
            img[c * S * S + i] = quantize(std::clamp(v, 0.0, 1.0));
        }
    }
    if (d.lesion && !lesion.empty()) {
        s.label = 1;
        s.box = lesion.bounding_rect();
        s.mask = std::move(lesion);
    }
    return s;
}

Dataset::Dataset(std::vector<Sample> samples) : samples_(std::move(samples))
{
}

std::size_t Dataset::positives() const
{
    std::size_t n = 0;
    for (const auto &s : samples_) {
        n += s.label == 1 ? 1 : 0;
    }
    return n;
}

const std::optional<Rect> &Dataset::box(std::size_t i) const
{
    ++audit_->box_reads;
    return samples_.at(i).box;
}

const std::optional<Mask> &Dataset::mask(std::size_t i) const
{
    ++audit_->mask_reads;
    return samples_.at(i).mask;
}

Dataset Dataset::subset(const std::vector<std::size_t> &indices) const
{
    Dataset out;
    for (auto i : indices) {
        out.samples_.push_back(samples_.at(i));
    }
    out.audit_ = audit_;
    return out;
}

DatasetSplits generate_in_memory(const SynthConfig &config, std::uint64_t seed)
{
    config.validate();
    DatasetSplits out;
    std::uint64_t k = 0;
    auto fill = [&](Split split, std::size_t count) {
        std::vector<Sample> samples;
        samples.reserve(count);
        for (std::size_t i = 0; i < count; ++i, ++k) {
            std::ostringstream id;
            id << split_name(split) << '-' << std::setw(6) << std::setfill('0') << i;
            samples.push_back(render_sample(config, substream_seed(seed, k), id.str()));
        }
        return Dataset(std::move(samples));
    };
    out.train = fill(Split::train, config.train_count);
    out.val = fill(Split::val, config.val_count);
    out.holdout = fill(Split::holdout, config.holdout_count);
    return out;
}

namespace
{

void write_split(const Dataset &ds, const fs::path &dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create directory " + dir.string() + ": " + ec.message());
    }
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
    if (!manifest) {
        throw Error("cannot write " + (dir / "manifest.jsonl").string());
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto &img = ds.image(i);
        const std::string raw_name = ds.id(i) + ".f32";
        {
            std::ofstream raw(dir / raw_name, std::ios::binary | std::ios::trunc);
            for (double v : img.data()) {
                io::write_le(raw, static_cast<float>(v));
            }
            if (!raw) {
                throw Error("write failed: " + (dir / raw_name).string());
            }
        }
        nlohmann::ordered_json rec;
        rec["id"] = ds.id(i);
        rec["label"] = ds.label(i);
        rec["channels"] = img.dim(0);
        rec["height"] = img.dim(1);
        rec["width"] = img.dim(2);
        rec["image"] = raw_name;
        if (ds.label(i) == 1) {
            const auto &box = *ds.box(i);
            rec["box"] = {box.cx, box.cy, box.w, box.h};
            const std::string mask_name = ds.id(i) + ".mask";
            const auto packed = ds.mask(i)->pack();
            std::ofstream mf(dir / mask_name, std::ios::binary | std::ios::trunc);
            mf.write(reinterpret_cast<const char *>(packed.data()), static_cast<std::streamsize>(packed.size()));
            if (!mf) {
                throw Error("write failed: " + (dir / mask_name).string());
            }
            rec["mask"] = mask_name;
        }
        manifest << rec.dump() << '\n';
    }
    if (!manifest) {
        throw Error("write failed: " + (dir / "manifest.jsonl").string());
    }
}

} // namespace

void generate_dataset(const SynthConfig &config, std::uint64_t seed, const fs::path &out_dir)
{
    const auto splits = generate_in_memory(config, seed);
    write_split(splits.train, out_dir / "train");
    write_split(splits.val, out_dir / "val");
    write_split(splits.holdout, out_dir / "holdout");
}

Dataset Dataset::load(const fs::path &split_dir)
{
    const auto manifest_path = split_dir / "manifest.jsonl";
    std::ifstream manifest(manifest_path);
    if (!manifest) {
        throw Error("cannot open " + manifest_path.string());
    }
    std::vector<Sample> samples;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) {
            continue;
        }
        const auto rec = nlohmann::json::parse(line);
        Sample s;
        s.id = rec.at("id").get<std::string>();
        s.label = rec.at("label").get<int>();
        const auto C = rec.at("channels").get<std::size_t>();
        const auto H = rec.at("height").get<std::size_t>();
        const auto W = rec.at("width").get<std::size_t>();
        const auto raw_path = split_dir / rec.at("image").get<std::string>();
        std::ifstream raw(raw_path, std::ios::binary);
        if (!raw) {
            throw Error("cannot open " + raw_path.string());
        }
        std::vector<double> values(C * H * W);
        for (auto &v : values) {
            v = io::read_le<float>(raw, raw_path);
        }
        s.image = Tensor::from({C, H, W}, std::move(values));
        if (rec.contains("box")) {
            const auto b = rec.at("box").get<std::vector<double>>();
            if (b.size() != 4) {
                throw Error("box must have 4 values in " + manifest_path.string());
            }
            s.box = Rect{b[0], b[1], b[2], b[3]};
        }
        if (rec.contains("mask")) {
            const auto mask_path = split_dir / rec.at("mask").get<std::string>();
            std::ifstream mf(mask_path, std::ios::binary);
            if (!mf) {
                throw Error("cannot open " + mask_path.string());
            }
            std::vector<std::uint8_t> packed((H * W + 7) / 8);
            mf.read(reinterpret_cast<char *>(packed.data()), static_cast<std::streamsize>(packed.size()));
            if (!mf) {
                throw Error("truncated mask file " + mask_path.string());
            }
            s.mask = Mask::unpack(packed, H, W);
        }
        samples.push_back(std::move(s));
    }
    return Dataset(std::move(samples));
}

DatasetSplits load_splits(const fs::path &data_dir)
{
    return {Dataset::load(data_dir / "train"), Dataset::load(data_dir / "val"), Dataset::load(data_dir / "holdout")};
}

int threshold_heuristic(const Tensor &image)
{
    const std::size_t plane = image.dim(1) * image.dim(2);
    const auto d = image.data();
    std::size_t bright = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        bright += d[i] > 0.72 ? 1 : 0;
    }
    return bright >= 8 ? 1 : 0;
}

} // namespace weakloc::synth
