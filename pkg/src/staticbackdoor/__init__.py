"""Static-trigger backdoor poisoning, transformation defenses and transform-enhanced attacks."""
from .errors import (BackdoorError, ConfigurationError, ConsistencyError, EvaluationError, FormatError,
                     PlacementError, TrainingError)
from .imaging import Image, LabeledDataset, bilinear_resize, concat, load_cifar10, load_mnist
from .kernels import BACKEND
from .trigger import (AlphaMask, CoveringBox, PoisonSpec, Trigger, blended_trigger, default_badnets_trigger,
                      generate_poisoned, make_poisoned_dataset, minimum_covering_box, recolor_trigger, relocate_trigger)
from .transforms import TransformDomain, TransformParam, apply, flip_lr, sample_param, shrink_pad
from .model import (ClassifierModel, TrainConfig, forward, load_checkpoint, loss_and_grads, new_model,
                    save_checkpoint, train, train_enhanced)
from .defense import NO_DEFENSE, DefensePolicy, defended_predict, flip_policy, shrinkpad_policy
from .evaluation import (EvalReport, attack_success_rate, clean_accuracy, compare, sweep_appearance,
                         sweep_location)

__version__ = "0.1.0"
