#include <stdio.h>
#include <string.h>
#include "scalemix.h"

#define CHECK(call)                                                             \
    do {                                                                        \
        SmmStatus s_ = (call);                                                  \
        if (s_ != SMM_STATUS_OK) {                                              \
            const char *m_ = smm_last_error_message();                          \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, m_ ? m_ : "");    \
            return 1;                                                           \
        }                                                                       \
    } while (0)

int main(void) {
    double x[40];
    uint32_t y[20];
    for (int i = 0; i < 20; i++) {
        int c = i % 2;
        x[2 * i] = 10.0 * c + 0.1 * (i % 5);
        x[2 * i + 1] = -0.05 * (i % 7);
        y[i] = (uint32_t)(c + 1);
    }
    SmmClassifier *h = NULL;
    CHECK(smm_classifier_train(x, y, 20, 2, smm_train_options_default(), &h));

    double probe[2] = {10.1, 0.0};
    uint32_t label = 0;
    CHECK(smm_classifier_classify(h, probe, 2, &label));
    if (label != 2) {
        fprintf(stderr, "label %u\n", label);
        return 1;
    }

    char *json = NULL;
    CHECK(smm_classifier_to_json(h, &json));
    SmmClassifier *copy = NULL;
    CHECK(smm_classifier_from_json(json, &copy));
    smm_string_free(json);

    double lp[2];
    if (smm_classifier_log_posterior(copy, probe, 3, lp, 2) != SMM_STATUS_DIMENSION_MISMATCH) {
        return 1;
    }
    if (strstr(smm_last_error_message(), "dimension") == NULL) {
        return 1;
    }
    printf("ok %zu %zu\n", smm_classifier_dim(copy), smm_classifier_num_classes(copy));
    smm_classifier_free(copy);
    smm_classifier_free(h);
    return 0;
}
