/* Links against libholoface_ffi.a. argv[1] holds 51 "u v" lines of exact
 * landmarks for a head at z = 0.8 m seen by fx = fy = 500, cx = 320, cy = 240. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "holoface.h"

#define CHECK(cond)                                                              \
    do {                                                                         \
        if (!(cond)) {                                                           \
            const char *e = hf_last_error();                                     \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, e ? e : "-"); \
            return 1;                                                            \
        }                                                                        \
    } while (0)

static bool detect(void *user, uint64_t frame_id, HfFaceBox *out) {
    (void)user;
    (void)frame_id;
    (void)out;
    return false;
}

static bool align(void *user, uint64_t frame_id, const double *init, size_t count, double *out, double *confidence) {
    (void)user;
    (void)frame_id;
    memcpy(out, init, 2 * count * sizeof(double));
    *confidence = 1.0;
    return true;
}

int main(int argc, char **argv) {
    CHECK(argc == 2);
    double lm[102];
    FILE *f = fopen(argv[1], "r");
    CHECK(f != NULL);
    for (int i = 0; i < 102; i++) CHECK(fscanf(f, "%lf", &lm[i]) == 1);
    fclose(f);

    HfModel *model = NULL;
    CHECK(hf_model_bundled(&model) == HF_STATUS_OK);
    CHECK(hf_model_landmark_count(model) == 51);
    CHECK(fabs(hf_model_pupil_distance(model) - 0.063) < 1e-12);

    HfIntrinsics k = {500.0, 500.0, 320.0, 240.0};
    HfFitResult r;
    double weights[64];
    size_t nw = hf_model_blendshape_count(model);
    CHECK(nw <= 64);
    CHECK(hf_fit(model, lm, 51, &k, NULL, weights, nw, &r) == HF_STATUS_OK);
    CHECK(r.converged);
    CHECK(fabs(r.pose.translation[2] - 0.8) < 1e-8);

    CHECK(hf_fit(NULL, lm, 51, &k, NULL, NULL, 0, &r) == HF_STATUS_NULL_POINTER);
    CHECK(hf_last_error() != NULL && strstr(hf_last_error(), "model") != NULL);

    HfFilter *filter = NULL;
    CHECK(hf_filter_new(NULL, &filter) == HF_STATUS_OK);
    double p[3] = {0.0, 0.0, 1.0}, q[3];
    CHECK(hf_filter_update(filter, p, 0.0) == HF_STATUS_OK);
    CHECK(hf_filter_predict(filter, 0.05, q) == HF_STATUS_OK);
    CHECK(fabs(q[2] - 1.0) < 1e-12);
    hf_filter_free(filter);

    double errors[1] = {0.04}, auc = 0.0;
    CHECK(hf_auc(errors, 1, 0.08, &auc) == HF_STATUS_OK);
    CHECK(fabs(auc - 50.0) < 1e-12);
    CHECK(hf_request_len(51) == 12989);

    HfCallbacks cb = {NULL, detect, align};
    HfTracker *tracker = NULL;
    CHECK(hf_tracker_new(model, &k, "{\"image_size\": [640, 480]}", &cb, &tracker) == HF_STATUS_OK);
    HfFrame frame = {0, 0.0, {{1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}}, NULL, 0, 0, 0};
    HfTrackOutput out;
    CHECK(hf_tracker_step(tracker, &frame, 0.0, &out, NULL, 0) == HF_STATUS_OK);
    CHECK(!out.tracking_valid && out.mode == HF_MODE_DETECTING && !out.has_pose);
    hf_tracker_free(tracker);
    hf_model_free(model);

    printf("ok %s\n", hf_version());
    return 0;
}
