#include "n2ntd/core/binio.hpp"
#include "n2ntd/core/errors.hpp"
#include "n2ntd/training/trainer.hpp"

#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>

// Checkpoint container: magic N2TD, u32 version, JSON manifest (config plus
// digest, epoch, metric history, rng state), then named CRC-checksummed f32
// parameter blocks. Content is a pure function of the checkpoint value — no
// timestamps or environment data — so identical runs save identical bytes.

namespace n2ntd::training {

using nlohmann::json;

namespace {

constexpr uint32_t kVersion = 1;

json config_to_json(const TrainConfig& cfg)
{
    json j;
    j["mode"] = train_mode_name(cfg.mode);
    j["k"] = cfg.k;
    j["blind_mode"] =
        cfg.blind_mode == model::BlindMode::strict ? "strict" : "paper";
    j["lr"] = cfg.lr;
    j["batch_size"] = cfg.batch_size;
    j["crop"] = cfg.crop;
    j["max_epochs"] = cfg.max_epochs;
    j["patience"] = cfg.patience;
    j["seed"] = cfg.seed;
    j["w_ssim"] = cfg.w_ssim;
    j["w_l1"] = cfg.w_l1;
    j["steps_per_epoch"] = cfg.steps_per_epoch;
    j["noise_lr_scale"] = cfg.noise_lr_scale;
    j["sigma_reg"] = cfg.sigma_reg;
    j["boundary"] =
        cfg.boundary == projsim::Boundary::wrap ? "wrap" : "skip";
    j["channels"] = cfg.model.channels;
    j["levels"] = cfg.model.levels;
    j["lstm_hidden_bottleneck"] = cfg.model.lstm_hidden_bottleneck;
    j["lstm_hidden_tail"] = cfg.model.lstm_hidden_tail;
    j["kernel_size"] = cfg.model.kernel_size;
    j["attention_reduction"] = cfg.model.attention_reduction;
    return j;
}

TrainConfig config_from_json(const json& j)
{
    TrainConfig cfg;
    cfg.mode = parse_train_mode(j.at("mode").get<std::string>());
    cfg.k = j.at("k").get<int>();
    const std::string bm = j.at("blind_mode").get<std::string>();
    if (bm == "paper")
        cfg.blind_mode = model::BlindMode::paper;
    else if (bm == "strict")
        cfg.blind_mode = model::BlindMode::strict;
    else
        throw Error(Err::MalformedHeader, "unknown blind_mode: " + bm);
    cfg.lr = j.at("lr").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.crop = j.at("crop").get<int>();
    cfg.max_epochs = j.at("max_epochs").get<int>();
    cfg.patience = j.at("patience").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.w_ssim = j.at("w_ssim").get<double>();
    cfg.w_l1 = j.at("w_l1").get<double>();
    cfg.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    cfg.noise_lr_scale = j.at("noise_lr_scale").get<double>();
    cfg.sigma_reg = j.at("sigma_reg").get<double>();
    const std::string bd = j.at("boundary").get<std::string>();
    if (bd == "wrap")
        cfg.boundary = projsim::Boundary::wrap;
    else if (bd == "skip")
        cfg.boundary = projsim::Boundary::skip;
    else
        throw Error(Err::MalformedHeader, "unknown boundary: " + bd);
    cfg.model.channels = j.at("channels").get<std::vector<int>>();
    cfg.model.levels = j.at("levels").get<int>();
    cfg.model.lstm_hidden_bottleneck = j.at("lstm_hidden_bottleneck").get<int>();
    cfg.model.lstm_hidden_tail = j.at("lstm_hidden_tail").get<int>();
    cfg.model.kernel_size = j.at("kernel_size").get<int>();
    cfg.model.attention_reduction = j.at("attention_reduction").get<int>();
    cfg.model.k = cfg.k;
    cfg.model.blind_mode = cfg.blind_mode;
    return cfg;
}

void write_block(std::ostream& os, const std::string& name,
                 const Tensor<float>& t)
{
    io::write_u32(os, uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    io::write_u32(os, uint32_t(t.shape.size()));
    for (int d : t.shape) io::write_u32(os, uint32_t(d));
    io::write_u64(os, uint64_t(t.v.size()));
    std::vector<unsigned char> buf(t.v.size() * 4);
    for (size_t i = 0; i < t.v.size(); ++i) {
        uint32_t bits;
        std::memcpy(&bits, &t.v[i], 4);
        buf[4 * i + 0] = (unsigned char)(bits);
        buf[4 * i + 1] = (unsigned char)(bits >> 8);
        buf[4 * i + 2] = (unsigned char)(bits >> 16);
        buf[4 * i + 3] = (unsigned char)(bits >> 24);
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             std::streamsize(buf.size()));
    io::write_u32(os, io::crc32(buf.data(), buf.size()));
}

Tensor<float> read_block(std::istream& is, std::string& name)
{
    uint32_t name_len;
    if (!io::read_u32(is, name_len) || name_len > 4096)
        throw Error(Err::TruncatedPayload, "truncated parameter block");
    name.resize(name_len);
    if (!is.read(name.data(), std::streamsize(name_len)))
        throw Error(Err::TruncatedPayload, "truncated block name");
    uint32_t rank;
    if (!io::read_u32(is, rank) || rank > 8)
        throw Error(Err::MalformedHeader, "invalid block rank");
    std::vector<int> shape(rank);
    int64_t prod = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d;
        if (!io::read_u32(is, d))
            throw Error(Err::TruncatedPayload, "truncated block shape");
        shape[i] = int(d);
        prod *= int64_t(d);
    }
    uint64_t count;
    if (!io::read_u64(is, count))
        throw Error(Err::TruncatedPayload, "truncated block length");
    if (int64_t(count) != prod)
        throw Error(Err::MalformedHeader, "block length disagrees with shape");
    std::vector<unsigned char> buf(size_t(count) * 4);
    if (!is.read(reinterpret_cast<char*>(buf.data()),
                 std::streamsize(buf.size())))
        throw Error(Err::TruncatedPayload, "truncated block payload");
    uint32_t stored_crc;
    if (!io::read_u32(is, stored_crc))
        throw Error(Err::TruncatedPayload, "missing block checksum");
    if (io::crc32(buf.data(), buf.size()) != stored_crc)
        throw Error(Err::ChecksumError,
                    "parameter block checksum mismatch: " + name);
    Tensor<float> t;
    t.shape = shape;
    t.v.resize(size_t(count));
    for (size_t i = 0; i < t.v.size(); ++i) {
        const uint32_t bits = uint32_t(buf[4 * i]) |
                              uint32_t(buf[4 * i + 1]) << 8 |
                              uint32_t(buf[4 * i + 2]) << 16 |
                              uint32_t(buf[4 * i + 3]) << 24;
        std::memcpy(&t.v[i], &bits, 4);
    }
    return t;
}

std::string u64_hex(uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

uint64_t hex_u64(const std::string& s)
{
    if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos)
        throw Error(Err::MalformedHeader, "bad rng state word");
    return std::strtoull(s.c_str(), nullptr, 16);
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error(Err::IoError, "cannot open " + path + " for writing");

    json manifest;
    manifest["version"] = kVersion;
    manifest["digest"] = config_digest(ckpt.config);
    manifest["config"] = config_to_json(ckpt.config);
    manifest["epoch"] = ckpt.epoch;
    manifest["adam_t"] = ckpt.opt.t;
    json hist = json::array();
    for (const ValRecord& r : ckpt.history) {
        json h;
        h["step"] = r.step;
        h["loss"] = r.loss;
        h["psnr_db"] = r.psnr_db;
        h["ssim"] = r.ssim;
        h["l1"] = r.l1;
        h["stop_metric"] = r.stop_metric;
        h["a"] = r.a;
        h["lambda"] = r.lambda;
        hist.push_back(h);
    }
    manifest["history"] = hist;
    json rngj = json::array();
    for (uint64_t w : ckpt.rng_state) rngj.push_back(u64_hex(w));
    manifest["rng_state"] = rngj;

    const std::string mtext = manifest.dump();
    os.write("N2TD", 4);
    io::write_u32(os, kVersion);
    io::write_u32(os, uint32_t(mtext.size()));
    os.write(mtext.data(), std::streamsize(mtext.size()));

    uint32_t n_blocks = 0;
    ckpt.state.for_each_param(
        [&](const std::string&, const Tensor<float>&) { n_blocks += 3; });
    n_blocks += 1;  // noise scalars
    io::write_u32(os, n_blocks);

    ckpt.state.for_each_param([&](const std::string& n, const Tensor<float>& t) {
        write_block(os, "param." + n, t);
    });
    ckpt.opt.m.for_each_param([&](const std::string& n, const Tensor<float>& t) {
        write_block(os, "adam_m." + n, t);
    });
    ckpt.opt.v.for_each_param([&](const std::string& n, const Tensor<float>& t) {
        write_block(os, "adam_v." + n, t);
    });
    Tensor<float> noise({6});
    noise.v = {ckpt.params.raw_a, ckpt.params.raw_lambda, ckpt.opt.m_a,
               ckpt.opt.v_a,      ckpt.opt.m_lambda,      ckpt.opt.v_lambda};
    write_block(os, "noise", noise);

    if (!os)
        throw Error(Err::IoError, "failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw Error(Err::IoError, "cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "N2TD", 4) != 0)
        throw Error(Err::MalformedHeader, "not a checkpoint file");
    uint32_t version;
    if (!io::read_u32(is, version))
        throw Error(Err::MalformedHeader, "missing checkpoint version");
    if (version != kVersion)
        throw Error(Err::VersionMismatch,
                    "unsupported checkpoint version " + std::to_string(version));
    uint32_t mlen;
    if (!io::read_u32(is, mlen))
        throw Error(Err::MalformedHeader, "missing manifest length");
    std::string mtext(mlen, '\0');
    if (!is.read(mtext.data(), std::streamsize(mlen)))
        throw Error(Err::MalformedHeader, "truncated manifest");

    Checkpoint ck;
    json manifest;
    try {
        manifest = json::parse(mtext);
        ck.config = config_from_json(manifest.at("config"));
        ck.epoch = manifest.at("epoch").get<int>();
        ck.opt.t = manifest.at("adam_t").get<int64_t>();
        for (const json& h : manifest.at("history")) {
            ValRecord r;
            r.step = h.at("step").get<int64_t>();
            r.loss = h.at("loss").get<double>();
            r.psnr_db = h.at("psnr_db").get<double>();
            r.ssim = h.at("ssim").get<double>();
            r.l1 = h.at("l1").get<double>();
            r.stop_metric = h.at("stop_metric").get<double>();
            r.a = h.at("a").get<double>();
            r.lambda = h.at("lambda").get<double>();
            ck.history.push_back(r);
        }
        const json& rngj = manifest.at("rng_state");
        if (!rngj.is_array() || rngj.size() != 4)
            throw Error(Err::MalformedHeader, "bad rng state");
        for (size_t i = 0; i < 4; ++i)
            ck.rng_state[i] = hex_u64(rngj[i].get<std::string>());
        if (manifest.at("digest").get<std::string>() != config_digest(ck.config))
            throw Error(Err::ConfigMismatch,
                        "checkpoint config digest mismatch");
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(Err::MalformedHeader,
                    std::string("invalid checkpoint manifest: ") + e.what());
    }

    ck.state = model::init_model<float>(ck.config.effective_model(), 0);
    ck.opt.m = model::zero_like(ck.state);
    ck.opt.v = model::zero_like(ck.state);

    uint32_t n_blocks;
    if (!io::read_u32(is, n_blocks))
        throw Error(Err::MalformedHeader, "missing block count");
    std::map<std::string, Tensor<float>> blocks;
    for (uint32_t i = 0; i < n_blocks; ++i) {
        std::string name;
        Tensor<float> t = read_block(is, name);
        blocks[name] = std::move(t);
    }

    auto take = [&](const std::string& name, Tensor<float>& dst) {
        auto it = blocks.find(name);
        if (it == blocks.end())
            throw Error(Err::MalformedHeader, "missing block: " + name);
        if (it->second.shape != dst.shape)
            throw Error(Err::ConfigMismatch, "block shape mismatch: " + name);
        dst.v = std::move(it->second.v);
    };
    ck.state.for_each_param([&](const std::string& n, Tensor<float>& t) {
        take("param." + n, t);
    });
    ck.opt.m.for_each_param([&](const std::string& n, Tensor<float>& t) {
        take("adam_m." + n, t);
    });
    ck.opt.v.for_each_param([&](const std::string& n, Tensor<float>& t) {
        take("adam_v." + n, t);
    });
    {
        auto it = blocks.find("noise");
        if (it == blocks.end() || it->second.v.size() != 6)
            throw Error(Err::MalformedHeader, "missing noise parameter block");
        const std::vector<float>& nv = it->second.v;
        ck.params.raw_a = nv[0];
        ck.params.raw_lambda = nv[1];
        ck.opt.m_a = nv[2];
        ck.opt.v_a = nv[3];
        ck.opt.m_lambda = nv[4];
        ck.opt.v_lambda = nv[5];
    }
    return ck;
}

} // namespace n2ntd::training
