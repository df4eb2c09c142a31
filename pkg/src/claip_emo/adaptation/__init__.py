from claip_emo.adaptation.accounting import ParamReport, count_params, param_table
from claip_emo.adaptation.lora import (
    AdapterSet, LoraLinear, enable_full_finetune, inject, load_adapters, lora_forward, merge, merge_all,
    save_adapters)
