// amt: piano-transcription command line.
//
//   transcribe  audio -> MIDI through a trained checkpoint
//   train       paired (wav, mid) directory -> checkpoints + loss log
//   eval        reference MIDI vs estimated MIDI, three-regime report
//   encode      MIDI -> high-resolution target planes (.roll)
//   cqt         WAV -> log-CQT spectrogram dump (.cqts)
//   pianoroll   MIDI -> PPM piano-roll image
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric error.

#include "amt/audio.hpp"
#include "amt/cqt.hpp"
#include "amt/eval.hpp"
#include "amt/labels.hpp"
#include "amt/midi.hpp"
#include "amt/models.hpp"
#include "amt/pianoroll.hpp"
#include "amt/train.hpp"
#include "amt/transcribe.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

namespace fs = std::filesystem;
using Scalar = float;

namespace {

int log_level() {
    const char* env = std::getenv("AMT_LOG");
    if (!env) return 0;
    const std::string v(env);
    if (v == "debug") return 2;
    if (v == "info") return 1;
    return 0;
}

void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[amt] " << msg << "\n";
}

amt::ModelConfig load_model_config(const std::string& path) {
    if (path.empty()) return {};
    return amt::ModelConfig::from_file(path);
}

struct ThresholdFlags {
    double onset = 0.4, offset = 0.4, frame = 0.4, velocity = 0.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--onset-thr", onset, "onset threshold (default 0.4)");
        cmd->add_option("--offset-thr", offset, "offset threshold (default 0.4)");
        cmd->add_option("--frame-thr", frame, "frame threshold (default 0.4)");
        cmd->add_option("--vel-thr", velocity, "velocity threshold (default 0)");
    }
    amt::DecodeThresholds thresholds() const { return {onset, offset, frame, velocity}; }
};

int cmd_transcribe(const std::string& audio_path, const std::string& checkpoint,
                   const std::string& config_path, const std::string& out_path,
                   const ThresholdFlags& thr, unsigned seed) {
    amt::ModelConfig cfg = load_model_config(config_path);
    auto model = amt::make_model<Scalar>(cfg, seed);
    amt::nn::load_checkpoint(model->params(), checkpoint);
    log_info("loaded checkpoint " + checkpoint);

    amt::AudioClip clip = amt::load_wav(audio_path);
    log_info("transcribing " + audio_path + " (" + std::to_string(clip.duration()) + " s)");
    amt::NoteSequence notes = amt::transcribe(clip, *model, thr.thresholds());
    amt::write_midi(notes, out_path);
    std::cout << "wrote " << notes.notes.size() << " notes to " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ref_path, const std::string& est_path,
             const std::string& out_path, bool pooled) {
    amt::NoteSequence ref, est;
    try {
        ref = amt::parse_midi_file(ref_path);
    } catch (const amt::Error& e) {
        throw amt::DataError(e.code(), std::string("reference file: ") + e.what());
    }
    try {
        est = amt::parse_midi_file(est_path);
    } catch (const amt::Error& e) {
        throw amt::DataError(e.code(), std::string("estimate file: ") + e.what());
    }
    (void)pooled; // single-pair evaluation; pooled affects multi-file means only
    amt::EvalReport report = amt::evaluate(ref, est);
    std::cout << amt::format_report_table(report);
    if (!out_path.empty()) {
        std::ofstream os(out_path);
        amt::require(os.good(), "io.unwritable", "cannot open " + out_path);
        os << amt::format_report_lines(fs::path(est_path).filename().string(), report);
    }
    return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& resume_checkpoint,
              unsigned seed_override, bool has_seed_override) {
    // one config file may carry both model and training keys
    amt::KeyValueConfig kv;
    if (!config_path.empty()) kv = amt::KeyValueConfig::parse_file(config_path);
    std::vector<std::string> allowed = amt::ModelConfig::config_keys();
    const std::vector<std::string> train_keys = amt::TrainConfig::config_keys();
    allowed.insert(allowed.end(), train_keys.begin(), train_keys.end());
    kv.reject_unknown_keys(allowed);
    amt::ModelConfig model_cfg = amt::ModelConfig::from_kv_unchecked(kv);
    amt::TrainConfig train_cfg = amt::TrainConfig::from_kv_unchecked(kv);
    if (has_seed_override) train_cfg.seed = seed_override;

    // collect paired basenames
    std::vector<std::pair<std::string, std::string>> pairs;
    amt::require(fs::is_directory(dataset_dir), "train.bad_dataset",
                 "not a directory: " + dataset_dir);
    for (const auto& entry : fs::directory_iterator(dataset_dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
        fs::path mid = entry.path();
        mid.replace_extension(".mid");
        if (!fs::exists(mid)) {
            mid.replace_extension(".midi");
            amt::require(fs::exists(mid), "train.unpaired",
                         "no MIDI twin for " + entry.path().string());
        }
        pairs.emplace_back(entry.path().string(), mid.string());
    }
    std::sort(pairs.begin(), pairs.end());
    amt::require(!pairs.empty(), "train.empty_dataset",
                 "no (wav, mid) pairs in " + dataset_dir);

    // prepare segments
    const amt::CqtConfig cqt_cfg;
    const amt::CqtTransform transform(cqt_cfg);
    std::vector<amt::TrainItem<Scalar>> items;
    for (const auto& [wav_path, mid_path] : pairs) {
        log_info("preparing " + wav_path);
        amt::AudioClip clip = amt::load_wav(wav_path);
        if (clip.sample_rate != cqt_cfg.sample_rate)
            clip = amt::resample(clip, cqt_cfg.sample_rate);
        amt::NoteSequence notes = amt::parse_midi_file(mid_path);
        for (auto& [piece, piece_notes] :
             amt::segment(clip, notes, train_cfg.segment_seconds)) {
            amt::TrainItem<Scalar> item;
            amt::Spectrogram spec = transform(piece);
            item.spectrogram = spec.values;
            const amt::FrameGrid grid{cqt_cfg.frame_period(), spec.values.rows};
            item.targets = amt::encode_targets<Scalar>(piece_notes, grid, train_cfg.sharpness);
            items.push_back(std::move(item));
        }
    }
    log_info(std::to_string(items.size()) + " training segments");

    auto model = amt::make_model<Scalar>(model_cfg, train_cfg.seed);
    amt::Trainer<Scalar> trainer(*model, train_cfg);
    trainer.set_dataset(std::move(items));
    if (!resume_checkpoint.empty()) {
        trainer.load(resume_checkpoint);
        log_info("resumed from " + resume_checkpoint + " at step " +
                 std::to_string(trainer.step_count()));
    }

    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "train.log", std::ios::app);
    amt::require(log.good(), "io.unwritable", "cannot open training log");
    log.setf(std::ios::fixed);
    log.precision(6);

    const int64_t remaining = train_cfg.max_steps - trainer.step_count();
    for (int64_t i = 0; i < remaining; ++i) {
        amt::StepInfo info = trainer.step();
        log << "step " << info.step << " loss " << info.loss.total << " on " << info.loss.on
            << " off " << info.loss.off << " fr " << info.loss.fr << " vel " << info.loss.vel
            << " lr " << info.lr << "\n";
        if (info.step % 50 == 0)
            std::cout << "step " << info.step << " loss " << info.loss.total << " lr "
                      << info.lr << "\n";
        if (train_cfg.checkpoint_every > 0 && info.step % train_cfg.checkpoint_every == 0)
            trainer.save((fs::path(out_dir) /
                          ("checkpoint_" + std::to_string(info.step) + ".amtw"))
                             .string());
    }
    trainer.save((fs::path(out_dir) / "checkpoint.amtw").string());
    std::cout << "finished at step " << trainer.step_count() << ", checkpoint in " << out_dir
              << "\n";
    return 0;
}

int cmd_encode(const std::string& midi_path, const std::string& out_path, int sharpness,
               int frames_override) {
    amt::NoteSequence notes = amt::parse_midi_file(midi_path);
    const amt::CqtConfig cqt_cfg;
    amt::FrameGrid grid;
    grid.frame_period = cqt_cfg.frame_period();
    grid.n_frames = frames_override > 0
                        ? frames_override
                        : static_cast<int>(std::ceil(notes.span() / grid.frame_period)) + 1;
    auto targets = amt::encode_targets<float>(notes, grid, sharpness);
    amt::save_targets(targets, grid, out_path);
    std::cout << "wrote " << grid.n_frames << "x" << amt::kNumPitches << " target planes to "
              << out_path << "\n";
    return 0;
}

int cmd_cqt(const std::string& wav_path, const std::string& out_path) {
    const amt::CqtConfig cfg;
    amt::AudioClip clip = amt::load_wav(wav_path);
    if (clip.sample_rate != cfg.sample_rate) clip = amt::resample(clip, cfg.sample_rate);
    amt::Spectrogram spec = amt::cqt(clip, cfg);
    amt::save_spectrogram(spec, out_path);
    std::cout << "wrote " << spec.values.rows << "x" << spec.values.cols
              << " spectrogram to " << out_path << "\n";
    return 0;
}

int cmd_pianoroll(const std::string& midi_path, const std::string& out_path) {
    amt::NoteSequence notes = amt::parse_midi_file(midi_path);
    amt::Image img = amt::render_pianoroll(notes);
    amt::write_ppm(img, out_path);
    std::cout << "wrote " << img.width << "x" << img.height << " image to " << out_path
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"piano transcription toolkit"};
    app.require_subcommand(1);

    // transcribe
    auto* tr = app.add_subcommand("transcribe", "audio -> MIDI");
    std::string tr_audio, tr_ckpt, tr_cfg, tr_out = "out.mid";
    unsigned tr_seed = 0;
    ThresholdFlags tr_thr;
    tr->add_option("audio", tr_audio, "input WAV")->required();
    tr->add_option("--checkpoint", tr_ckpt, "trained checkpoint (.amtw)")->required();
    tr->add_option("--config", tr_cfg, "model config file");
    tr->add_option("--out", tr_out, "output MIDI path");
    tr->add_option("--seed", tr_seed, "model construction seed");
    tr_thr.attach(tr);

    // train
    auto* tn = app.add_subcommand("train", "train on a (wav, mid) directory");
    std::string tn_dir, tn_cfg, tn_out = "train_out", tn_resume;
    unsigned tn_seed = 0;
    tn->add_option("dataset", tn_dir, "directory of paired wav/mid files")->required();
    tn->add_option("--config", tn_cfg, "model + training config file");
    tn->add_option("--out", tn_out, "output directory");
    tn->add_option("--checkpoint", tn_resume, "resume from checkpoint");
    auto* seed_opt = tn->add_option("--seed", tn_seed, "override config seed");

    // eval
    auto* ev = app.add_subcommand("eval", "score estimated MIDI against reference");
    std::string ev_ref, ev_est, ev_out;
    bool ev_pooled = false;
    ev->add_option("reference", ev_ref, "reference MIDI")->required();
    ev->add_option("estimate", ev_est, "estimated MIDI")->required();
    ev->add_option("--out", ev_out, "write line-delimited report here");
    ev->add_flag("--pooled", ev_pooled, "pool notes instead of per-piece averaging");

    // encode
    auto* en = app.add_subcommand("encode", "MIDI -> training target planes");
    std::string en_midi, en_out = "targets.roll";
    int en_j = 5, en_frames = 0;
    en->add_option("midi", en_midi, "input MIDI")->required();
    en->add_option("--out", en_out, "output .roll path");
    en->add_option("--j", en_j, "target sharpness J (default 5)");
    en->add_option("--frames", en_frames, "explicit frame count");

    // cqt
    auto* cq = app.add_subcommand("cqt", "WAV -> spectrogram dump");
    std::string cq_wav, cq_out = "spec.cqts";
    cq->add_option("audio", cq_wav, "input WAV")->required();
    cq->add_option("--out", cq_out, "output .cqts path");

    // pianoroll
    auto* pr = app.add_subcommand("pianoroll", "MIDI -> PPM image");
    std::string pr_midi, pr_out = "roll.ppm";
    pr->add_option("midi", pr_midi, "input MIDI")->required();
    pr->add_option("--out", pr_out, "output .ppm path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (tr->parsed())
            return cmd_transcribe(tr_audio, tr_ckpt, tr_cfg, tr_out, tr_thr, tr_seed);
        if (tn->parsed())
            return cmd_train(tn_dir, tn_cfg, tn_out, tn_resume, tn_seed, seed_opt->count() > 0);
        if (ev->parsed()) return cmd_eval(ev_ref, ev_est, ev_out, ev_pooled);
        if (en->parsed()) return cmd_encode(en_midi, en_out, en_j, en_frames);
        if (cq->parsed()) return cmd_cqt(cq_wav, cq_out);
        if (pr->parsed()) return cmd_pianoroll(pr_midi, pr_out);
    } catch (const amt::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const amt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
