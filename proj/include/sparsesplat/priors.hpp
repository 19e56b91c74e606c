#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>

#include "formats.hpp"
#include "prior_protocol.hpp"
#include "rasterizer.hpp"
#include "toy_extractor.hpp"

namespace sparsesplat {

enum class PriorBackend { file, oracle, service };

inline constexpr const char* kEndpointEnv = "SPARSESPLAT_PRIOR_ENDPOINT";
// Oracle depth is only trusted where the reference render is mostly opaque.
inline constexpr double kOracleMinAlpha = 0.5;

// Where depth priors and patch embeddings come from. Exactly one backend is active.
class PriorSource {
public:
    static PriorSource from_directory(std::filesystem::path dir) {
        PriorSource s(PriorBackend::file);
        s.directory_ = std::move(dir);
        return s;
    }

    static PriorSource from_oracle(GaussianCloud reference) {
        if (reference.empty()) throw ConfigError("oracle prior backend needs a non-empty reference cloud");
        PriorSource s(PriorBackend::oracle);
        s.reference_ = std::make_shared<const GaussianCloud>(std::move(reference));
        return s;
    }

    // The environment variable, when set, replaces `endpoint`.
    static PriorSource from_service(std::string endpoint, double timeout_seconds = 30.0) {
        if (const char* env = std::getenv(kEndpointEnv); env != nullptr && *env != '\0') endpoint = env;
        Endpoint::parse(endpoint);
        PriorSource s(PriorBackend::service);
        s.endpoint_ = std::move(endpoint);
        s.timeout_ = timeout_seconds;
        return s;
    }

    PriorBackend backend() const { return backend_; }
    const std::filesystem::path& directory() const { return directory_; }
    const std::string& endpoint() const { return endpoint_; }
    const GaussianCloud* reference() const { return reference_.get(); }

    // Whether depth can be produced for an arbitrary (side) camera.
    bool depth_for_novel_views() const { return backend_ != PriorBackend::file; }

    // `stem` names the view for the file backend; `rendered` is the image sent to the service.
    DepthMap get_depth(const Camera& cam, const std::string& stem, const Image* rendered = nullptr) const {
        switch (backend_) {
        case PriorBackend::file: {
            const auto path = directory_ / (stem + ".pfm");
            if (!std::filesystem::exists(path)) throw IoError("missing depth prior " + path.string());
            DepthMap map = read_pfm(path);
            if (map.width() != cam.width || map.height() != cam.height) {
                throw DimensionMismatchError("depth prior " + path.string() + " does not match the view size");
            }
            return map;
        }
        case PriorBackend::oracle: {
            const RenderOutput r = render(*reference_, cam);
            DepthMap map(r.depth);
            for (std::size_t i = 0; i < map.valid.size(); ++i) {
                map.valid[i] = r.alpha_acc.data[i] > kOracleMinAlpha ? 1 : 0;
            }
            return map;
        }
        case PriorBackend::service: {
            if (rendered == nullptr) throw InvalidInputError("service depth prior needs the rendered image");
            if (rendered->width != cam.width || rendered->height != cam.height) {
                throw DimensionMismatchError("service depth prior: image does not match the camera");
            }
            return with_connection([&](ServiceConnection& c) { return c.request_depth(*rendered); });
        }
        }
        throw ConfigError("unknown prior backend");
    }

    FeatureEmbedding get_features(const Image& patch, const std::string& stem = {}, int crop_id = 0) const {
        if (patch.width < ToyExtractor::kMinPatch || patch.height < ToyExtractor::kMinPatch) {
            throw InvalidInputError("get_features: patch must be at least 8x8");
        }
        switch (backend_) {
        case PriorBackend::file: {
            const auto path = directory_ / (stem + "." + std::to_string(crop_id) + ".femb");
            if (!std::filesystem::exists(path)) throw IoError("missing feature prior " + path.string());
            return read_femb(path);
        }
        case PriorBackend::oracle:
            return ToyExtractor{}.embed(patch);
        case PriorBackend::service:
            return with_connection([&](ServiceConnection& c) { return c.request_features(patch); });
        }
        throw ConfigError("unknown prior backend");
    }

private:
    explicit PriorSource(PriorBackend b) : backend_(b) {}

    // A failed exchange drops the connection; the next request reconnects.
    template <class F>
    auto with_connection(F&& f) const -> std::invoke_result_t<F, ServiceConnection&> {
        try {
            return f(connection());
        } catch (const ServiceError&) {
            conn_->reset();
            throw;
        } catch (const DimensionMismatchError&) {
            conn_->reset();
            throw;
        }
    }

    ServiceConnection& connection() const {
        if (!conn_ || !*conn_) {
            if (!conn_) conn_ = std::make_shared<std::unique_ptr<ServiceConnection>>();
            *conn_ = std::make_unique<ServiceConnection>(endpoint_, timeout_);
        }
        return **conn_;
    }

    PriorBackend backend_;
    std::filesystem::path directory_;
    std::shared_ptr<const GaussianCloud> reference_;
    std::string endpoint_;
    double timeout_ = 30.0;
    mutable std::shared_ptr<std::unique_ptr<ServiceConnection>> conn_;
};

} // namespace sparsesplat
